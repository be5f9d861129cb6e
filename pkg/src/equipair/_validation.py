"""Input validation shared by the estimators and the functional API."""

import warnings

import numpy as np
from sklearn.utils import check_array

from .geometry import EuclideanDomain, FlatTorus, UnitAreaSphere


def check_points(X, space, name="points"):
    """Validate a point array against ``space`` and return a float copy.

    One-dimensional input is read as ``n`` points of a one-dimensional space.
    Euclidean points must lie in the closed domain (1e-12 slack); torus
    points are reduced to the fundamental domain; sphere points within 1e-6
    of the sphere are projected with a warning, farther ones are rejected.
    """
    X = np.asarray(X, dtype=float)
    width = space.ambient_dim
    if X.ndim == 1:
        X = X.reshape(-1, 1) if width == 1 else X.reshape(-1, width)
    X = check_array(X, dtype=np.float64, ensure_min_samples=0, input_name=name)
    if X.shape[1] != width:
        raise ValueError(f"{name} have {X.shape[1]} columns, space needs {width}")
    if isinstance(space, FlatTorus):
        return space.reduce(X)
    if isinstance(space, UnitAreaSphere):
        if len(X) == 0:
            return X
        nrm = np.linalg.norm(X, axis=1)
        off = np.abs(nrm - space.radius)
        if np.any(off > 1e-6):
            raise ValueError(f"{name} are not on the sphere of radius {space.radius:.6g}")
        if np.any(off > 1e-9 * space.radius):
            warnings.warn(f"{name} projected onto the sphere", stacklevel=3)
        return space.project(X)
    if isinstance(space, EuclideanDomain) and len(X):
        lo, hi = space.bounding_box()
        slack = 1e-12 * max(1.0, float(np.abs(hi - lo).max()))
        if not np.all(space.contains(X, tol=slack)):
            raise ValueError(f"{name} fall outside the domain {space.to_json()}")
    return X


def check_radii(radii, r_max=5.0, bins=100):
    """Ascending positive radius grid; ``None`` gives ``bins`` equal bins on ``[0, r_max]``."""
    if radii is None:
        return r_max * np.arange(1, bins + 1) / bins
    radii = np.atleast_1d(np.asarray(radii, dtype=float))
    if radii.size == 0 or not np.all(np.isfinite(radii)):
        raise ValueError("radii must be a non-empty finite array")
    if np.any(radii < 0) or np.any(np.diff(radii) <= 0):
        raise ValueError("radii must be non-negative and strictly increasing")
    return radii


def check_scale(M):
    M = float(M)
    if not M > 0:
        raise ValueError(f"scale M must be positive, got {M}")
    return M
