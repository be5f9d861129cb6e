"""Frame fields, the measure they induce, and scale sequences.

A frame field assigns an invertible matrix ``A(x)`` to every point of a
domain.  Its density ``|det A(x)|`` defines the reference probability
measure; ``normalize_frame`` rescales ``A`` so that measure has unit mass.
"""

from __future__ import annotations

import ast
import math
import operator
from dataclasses import dataclass, field

import numpy as np

from .geometry import Box, EuclideanDomain, FlatTorus

__all__ = [
    "DensityExpression",
    "FrameField",
    "SigmaMeasure",
    "ScaleSequence",
    "normalize_frame",
    "sigma_sample",
    "scale_at",
]

_BINOPS = {
    ast.Add: operator.add,
    ast.Sub: operator.sub,
    ast.Mult: operator.mul,
    ast.Div: operator.truediv,
    ast.Pow: operator.pow,
}
_CONSTANTS = {"pi": math.pi, "e": math.e}


class DensityExpression:
    """Arithmetic expression in the coordinates ``x1..xd`` (``x`` is ``x1``).

    Only ``+ - * / ^``, parentheses, numeric literals and the constants
    ``pi`` and ``e`` are accepted.

    >>> DensityExpression("1+x", 1)(np.array([[0.5]]))
    array([1.5])
    """

    def __init__(self, text, dim):
        self.text = str(text)
        self.dim = int(dim)
        tree = ast.parse(self.text.replace("^", "**"), mode="eval")
        self._check(tree.body)
        self._tree = tree.body

    def _check(self, node):
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            self._check(node.left)
            self._check(node.right)
        elif isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            self._check(node.operand)
        elif isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            pass
        elif isinstance(node, ast.Name):
            if node.id not in _CONSTANTS and self._coord(node.id) is None:
                raise ValueError(f"unknown symbol {node.id!r} in density {self.text!r}")
        else:
            raise ValueError(f"unsupported syntax in density {self.text!r}")

    def _coord(self, name):
        if name == "x":
            return 0
        if name.startswith("x") and name[1:].isdigit():
            k = int(name[1:]) - 1
            if 0 <= k < self.dim:
                return k
        return None

    def _eval(self, node, X):
        if isinstance(node, ast.BinOp):
            return _BINOPS[type(node.op)](self._eval(node.left, X), self._eval(node.right, X))
        if isinstance(node, ast.UnaryOp):
            v = self._eval(node.operand, X)
            return -v if isinstance(node.op, ast.USub) else v
        if isinstance(node, ast.Constant):
            return float(node.value)
        if node.id in _CONSTANTS:
            return _CONSTANTS[node.id]
        return X[:, self._coord(node.id)]

    def __call__(self, X):
        X = np.asarray(X, dtype=float).reshape(-1, self.dim)
        out = self._eval(self._tree, X)
        return np.broadcast_to(np.asarray(out, dtype=float), (len(X),)).copy()

    def __repr__(self):
        return f"DensityExpression({self.text!r}, {self.dim})"


@dataclass
class FrameField:
    """Continuous field of invertible matrices on a domain.

    Two kinds are supported: ``constant`` (a fixed matrix) and ``conformal``
    (``factor * base_density(x)**(1/d) * I``).  ``factor`` is the scalar
    applied by :func:`normalize_frame`.
    """

    dim: int
    kind: str = "constant"
    matrix: np.ndarray | None = None
    base_density: object = None
    factor: float = 1.0
    normalization: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind == "constant":
            A = np.eye(self.dim) if self.matrix is None else np.asarray(self.matrix, float)
            A = A.reshape(self.dim, self.dim)
            if abs(np.linalg.det(A)) == 0:
                raise ValueError("constant frame must be invertible")
            self.matrix = A
        elif self.kind == "conformal":
            if isinstance(self.base_density, str):
                self.base_density = DensityExpression(self.base_density, self.dim)
            if not callable(self.base_density):
                raise ValueError("conformal frame needs a density expression or callable")
        else:
            raise ValueError(f"unknown frame kind {self.kind!r}")

    @classmethod
    def identity(cls, dim):
        return cls(dim=dim)

    @classmethod
    def constant(cls, matrix):
        A = np.atleast_2d(np.asarray(matrix, float))
        return cls(dim=A.shape[0], matrix=A)

    @classmethod
    def conformal(cls, density, dim):
        return cls(dim=dim, kind="conformal", base_density=density)

    @property
    def is_constant(self):
        return self.kind == "constant"

    def density(self, X):
        """``|det A(x)|`` at each row of ``X``."""
        X = np.asarray(X, float).reshape(-1, self.dim)
        if self.kind == "constant":
            return np.full(len(X), abs(np.linalg.det(self.factor * self.matrix)))
        return self.factor**self.dim * np.asarray(self.base_density(X), float)

    def matrices(self, X):
        """Frame matrices at the rows of ``X``: ``(1, d, d)`` when constant, else ``(n, d, d)``."""
        if self.kind == "constant":
            return (self.factor * self.matrix)[None, :, :].copy()
        dens = self.density(X)
        if np.any(~(dens > 0)):
            raise ValueError("frame density must be positive")
        scale = dens ** (1.0 / self.dim)
        return scale[:, None, None] * np.eye(self.dim)[None, :, :]

    def inverse_norms(self, X):
        """Spectral norms of ``A(x)^{-1}`` at the rows of ``X``."""
        if self.kind == "constant":
            s = np.linalg.svd(self.factor * self.matrix, compute_uv=False)
            return np.full(max(len(np.atleast_2d(X)), 1), 1.0 / s.min())
        return self.density(X) ** (-1.0 / self.dim)

    def norm_bounds(self, domain, n=10_000, seed=0):
        """Sampled bounds on ``||A||`` and ``||A^{-1}||`` over ``domain``, inflated by 10%."""
        if self.kind == "constant":
            s = np.linalg.svd(self.factor * self.matrix, compute_uv=False)
            return float(s.max()), float(1.0 / s.min())
        X = domain.sample_uniform(n, seed)
        g = self.density(X) ** (1.0 / self.dim)
        return 1.1 * float(g.max()), 1.1 * float((1.0 / g).max())

    def rotated(self, Q):
        """Frame ``Q A`` for an orthogonal ``Q`` (constant frames only)."""
        if self.kind != "constant":
            raise ValueError("rotation is defined here for constant frames only")
        return FrameField(dim=self.dim, matrix=np.asarray(Q, float) @ self.matrix, factor=self.factor)

    def with_factor(self, factor):
        return FrameField(
            dim=self.dim,
            kind=self.kind,
            matrix=self.matrix,
            base_density=self.base_density,
            factor=float(factor),
        )

    def to_json(self):
        out = {"kind": self.kind, "factor": self.factor}
        if self.kind == "constant":
            out["matrix"] = self.matrix.tolist()
        elif isinstance(self.base_density, DensityExpression):
            out["density"] = self.base_density.text
        else:
            out["density"] = repr(self.base_density)
        if self.normalization:
            out["normalization"] = self.normalization
        return out

    @classmethod
    def from_json(cls, obj, dim):
        kind = obj.get("kind", "constant")
        if kind == "identity":
            return cls.identity(dim)
        if kind == "constant":
            return cls(dim=dim, matrix=obj.get("matrix"), factor=obj.get("factor", 1.0))
        return cls(dim=dim, kind="conformal", base_density=obj["density"], factor=obj.get("factor", 1.0))


def _box_quadrature_nodes(box, total=1_000_000):
    per_axis = max(2, int(round(total ** (1.0 / box.dim))))
    lo, hi = box.bounding_box()
    axes = [lo[k] + (np.arange(per_axis) + 0.5) * (hi[k] - lo[k]) / per_axis for k in range(box.dim)]
    cell = float(np.prod((hi - lo) / per_axis))
    return axes, cell


def _integrate_density(frame, domain, seed=0):
    """Integral of the frame density over ``domain`` and its error estimate."""
    if frame.is_constant:
        return float(frame.density(np.zeros((1, frame.dim)))[0] * domain.volume()), 0.0
    if isinstance(domain, Box):
        axes, cell = _box_quadrature_nodes(domain)
        total = 0.0
        # slice along the first axis to bound memory
        rest = np.stack(np.meshgrid(*axes[1:], indexing="ij"), axis=-1).reshape(-1, domain.dim - 1) if domain.dim > 1 else None
        for x0 in np.array_split(axes[0], max(1, len(axes[0]) // 256)):
            if rest is None:
                pts = x0[:, None]
            else:
                pts = np.concatenate(
                    [np.repeat(x0, len(rest))[:, None], np.tile(rest, (len(x0), 1))], axis=1
                )
            vals = frame.density(pts)
            if np.any(~(vals > 0)):
                raise ValueError("frame density is not positive at a quadrature node")
            total += vals.sum()
        return float(total * cell), 0.0
    if isinstance(domain, FlatTorus):
        # uniform in fractional coordinates; unit covolume so the Jacobian is 1
        n = 1_000_000
        U = np.random.default_rng(seed).random((n, frame.dim))
        vals = frame.density(U @ domain.basis)
    else:
        n = 1_000_000
        vals = frame.density(domain.sample_uniform(n, seed))
    if np.any(~(vals > 0)):
        raise ValueError("frame density is not positive at a sample point")
    vol = domain.volume()
    return float(vol * vals.mean()), float(vol * vals.std(ddof=1) / math.sqrt(n))


def normalize_frame(frame, domain, seed=0):
    """Rescale ``frame`` so its density integrates to one over ``domain``.

    Boxes use midpoint quadrature on ~1e6 nodes; balls and tori use Monte
    Carlo with 1e6 samples and record the standard error in
    ``frame.normalization``.
    """
    integral, stderr = _integrate_density(frame, domain, seed)
    if integral <= 0:
        raise ValueError("frame density must integrate to a positive value")
    s = integral ** (-1.0 / frame.dim)
    out = frame.with_factor(frame.factor * s)
    out.normalization = {"integral": integral, "stderr": stderr, "scalar": s}
    return out


class SigmaMeasure:
    """Probability measure ``|det A(x)| dx`` on a domain.

    ``density_max`` is the sampled maximum of the density (inflated by 10%
    unless the density is constant) used as the rejection envelope.
    """

    def __init__(self, frame, domain, seed=0):
        self.frame = frame
        self.domain = domain
        self.dim = domain.dim
        if frame.is_constant:
            self.density_max = float(frame.density(np.zeros((1, frame.dim)))[0])
            self.uniform = True
        else:
            X = domain.sample_uniform(10_000, seed)
            vals = frame.density(X)
            lo, hi = float(vals.min()), float(vals.max())
            self.uniform = hi - lo <= 1e-14 * max(abs(hi), 1.0)
            self.density_max = hi if self.uniform else 1.1 * hi

    @classmethod
    def uniform_on(cls, domain):
        frame = normalize_frame(FrameField.identity(domain.dim), domain)
        return cls(frame, domain)

    def density(self, X):
        return self.frame.density(X)

    def sample(self, n, seed=None):
        return sigma_sample(self, n, seed)

    def cdf_1d(self, x, nodes=100_000):
        """``σ([a, x))`` on an interval, by cumulative midpoint quadrature."""
        lo, hi = self.domain.bounding_box()
        lo, hi = float(lo[0]), float(hi[0])
        x = np.asarray(x, float)
        if self.uniform:
            return np.clip((x - lo) / (hi - lo), 0.0, 1.0)
        edges = np.linspace(lo, hi, nodes + 1)
        mids = 0.5 * (edges[1:] + edges[:-1])
        cum = np.concatenate([[0.0], np.cumsum(self.density(mids[:, None]) * (hi - lo) / nodes)])
        return np.interp(x, edges, cum)


def sigma_sample(sigma, n, seed=None):
    """I.i.d. draws from ``sigma`` by rejection against uniform proposals.

    A constant density returns the uniform sampler's stream unchanged.
    """
    n = int(n)
    if n < 0:
        raise ValueError("n must be non-negative")
    if sigma.uniform:
        return sigma.domain.sample_uniform(n, seed)
    rng = np.random.default_rng(seed)
    out = np.empty((n, sigma.dim))
    filled = 0
    proposed = accepted = 0
    while filled < n:
        batch = max(1024, 2 * (n - filled))
        cand = sigma.domain.sample_uniform(batch, rng)
        u = rng.random(batch)
        ok = u * sigma.density_max < sigma.density(cand)
        proposed += batch
        accepted += int(ok.sum())
        if proposed >= 100_000 and accepted < 1e-3 * proposed:
            raise RuntimeError(
                f"rejection sampler acceptance {accepted / proposed:.2e} below 1e-3; "
                "density envelope too loose"
            )
        keep = cand[ok]
        take = min(len(keep), n - filled)
        out[filled : filled + take] = keep[:take]
        filled += take
    return out


@dataclass
class ScaleSequence:
    """Scales ``M_i = c * N_i**theta`` or an explicit list, optionally clamped to ``N_i``."""

    c: float = 1.0
    theta: float = 1.0
    values: list | None = None
    clamp: bool = True

    def __post_init__(self):
        if self.values is None:
            if not self.c > 0:
                raise ValueError("scale prefactor c must be positive")
            if not (0 < self.theta <= 1):
                raise ValueError(f"theta must lie in (0, 1], got {self.theta}")
        elif any(not v > 0 for v in self.values):
            raise ValueError("explicit scales must be positive")

    def __call__(self, i, n):
        return scale_at(self, i, n)

    def to_json(self):
        if self.values is not None:
            return {"values": list(self.values), "clamp": self.clamp}
        return {"c": self.c, "theta": self.theta, "clamp": self.clamp}

    @classmethod
    def from_json(cls, obj):
        return cls(
            c=obj.get("c", 1.0),
            theta=obj.get("theta", 1.0),
            values=obj.get("values"),
            clamp=obj.get("clamp", True),
        )


def scale_at(seq, i, n):
    """Scale for row ``i`` with ``n`` points."""
    if seq.values is not None:
        m = float(seq.values[i])
    else:
        m = seq.c * float(n) ** seq.theta
    if seq.clamp:
        m = min(m, float(n))
    return m


def default_frame(space):
    """Identity frame normalised to unit mass on ``space`` (tori need no rescaling)."""
    if isinstance(space, EuclideanDomain):
        return normalize_frame(FrameField.identity(space.dim), space)
    return FrameField.identity(space.dim)
