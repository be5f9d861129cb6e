"""Reading and writing point rows.

Points are stored as headerless CSV, one point per line with 17 significant
digits per coordinate, so doubles round-trip exactly.  A JSON envelope
``{family, params, seed, rows: [{i, N, file}]}`` lists the files of an array.
"""

import json
import os

import numpy as np

__all__ = ["write_points_csv", "read_points_csv", "write_envelope", "read_envelope", "read_points"]


def write_points_csv(path, X):
    X = np.asarray(X, float)
    if X.ndim == 1:
        X = X[:, None]
    with open(path, "w") as fh:
        for row in X:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def read_points_csv(path):
    """Points from a CSV file; a non-numeric first line is skipped as a header."""
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if lines:
        try:
            [float(v) for v in lines[0].split(",")]
        except ValueError:
            lines = lines[1:]
    if not lines:
        return np.zeros((0, 1))
    X = np.array([[float(v) for v in ln.split(",")] for ln in lines])
    return X


def write_envelope(path, family, params, seed, rows):
    """``rows`` is a list of ``(i, N, file)``; file names are stored relative to ``path``."""
    base = os.path.dirname(os.path.abspath(path))
    doc = {
        "family": family,
        "params": params,
        "seed": seed,
        "rows": [{"i": int(i), "N": int(N), "file": os.path.relpath(os.path.abspath(f), base)}
                 for i, N, f in rows],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_envelope(path):
    """``(envelope dict, [(i, points), ...])`` with row sizes checked against the files."""
    with open(path) as fh:
        doc = json.load(fh)
    base = os.path.dirname(os.path.abspath(path))
    rows = []
    for r in doc["rows"]:
        X = read_points_csv(os.path.join(base, r["file"]))
        if len(X) != r["N"]:
            raise ValueError(f"row {r['i']}: file has {len(X)} points, envelope says {r['N']}")
        rows.append((int(r["i"]), X))
    return doc, rows


def read_points(path):
    """Rows from a JSON envelope or a single CSV file (as row 0)."""
    if str(path).endswith(".json"):
        return read_envelope(path)[1]
    return [(0, read_points_csv(path))]
