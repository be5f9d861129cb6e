"""Pair correlation of point rows at scale ``M``.

For ``N`` points and scale ``M`` in dimension ``d`` the distance statistic is

    rho[0, r] = M / N**2 * #{ordered pairs j1 != j2 : M**(1/d) * dist(j1, j2) <= r}

where ``dist`` is the frame-weighted Euclidean distance ``||A(x_j1)(x_j1 - x_j2)||``
on domains, the lattice-summed distance on flat tori and the geodesic
distance on spheres.  Curves are computed in one cell-list pass with integer
bin counts; ``engine="brute"`` runs the all-pairs reference.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy import special
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import _cells
from ._validation import check_points, check_radii, check_scale
from .geometry import (
    EuclideanDomain,
    FlatTorus,
    UnitAreaSphere,
    Window,
    ball_overlap,
    omega_measure,
    unit_ball_volume,
)
from .scaling import FrameField

__all__ = [
    "TestFunction",
    "PairCorrelationCurve",
    "pc_euclidean",
    "pc_torus",
    "pc_distance_curve",
    "pc_torus_curve",
    "pc_sphere_curve",
    "pc_brute_force",
    "pair_correlation_curve",
    "PairCorrelation",
]


class TestFunction:
    """Non-negative compactly supported test function on ``R^d``.

    Kinds
    -----
    indicator : indicator of a :class:`Window` (discontinuous on its boundary)
    overlap   : ``f(y) = r**d * ball_overlap(d, |y| / r)``, the autocorrelation
                of the ball of radius ``r``
    gaussian  : ``exp(-|y|**2)`` truncated at ``|y| < r_cut``
    hat       : ``max(0, 1 - |y| / width)``
    """

    __test__ = False  # not a pytest class

    def __init__(self, kind, dim, window=None, radius=1.0):
        if kind not in ("indicator", "overlap", "gaussian", "hat"):
            raise ValueError(f"unknown test function kind {kind!r}")
        if kind == "indicator" and window is None:
            raise ValueError("indicator test function needs a window")
        if radius < 0:
            raise ValueError("radius must be non-negative")
        self.kind = kind
        self.dim = int(dim)
        self.window = window
        self.radius = float(radius)

    @classmethod
    def indicator(cls, window):
        return cls("indicator", window.dim, window=window)

    @classmethod
    def overlap(cls, dim, radius=1.0):
        return cls("overlap", dim, radius=radius)

    @classmethod
    def gaussian(cls, dim, r_cut=3.0):
        return cls("gaussian", dim, radius=r_cut)

    @classmethod
    def hat(cls, dim, width=1.0):
        return cls("hat", dim, radius=width)

    @property
    def is_indicator(self):
        return self.kind == "indicator"

    @property
    def support_radius(self):
        if self.kind == "indicator":
            return self.window.outer_radius()
        if self.kind == "overlap":
            return 2.0 * self.radius
        return self.radius

    def radial(self, s):
        s = np.asarray(s, float)
        r = self.radius
        if self.kind == "overlap":
            if r == 0:
                return np.zeros_like(s)
            return r**self.dim * ball_overlap(self.dim, s / r)
        if self.kind == "gaussian":
            return np.where(s < r, np.exp(-s * s), 0.0)
        if self.kind == "hat":
            if r == 0:
                return np.zeros_like(s)
            return np.maximum(0.0, 1.0 - s / r)
        raise ValueError("indicator test functions are not radial in general")

    def __call__(self, Y):
        Y = np.asarray(Y, float).reshape(-1, self.dim)
        if self.kind == "indicator":
            return self.window.contains(Y).astype(float)
        return self.radial(np.sqrt((Y**2).sum(axis=1)))

    def integral(self):
        """``∫ f dy``: the Poisson reference value of ``rho f``."""
        d, r = self.dim, self.radius
        if self.kind == "indicator":
            return self.window.volume()
        if self.kind == "overlap":
            return (unit_ball_volume(d) * r**d) ** 2
        if self.kind == "gaussian":
            return math.pi ** (d / 2) * special.gammainc(d / 2, r * r)
        return unit_ball_volume(d) * r**d / (d + 1)

    def __repr__(self):
        extra = self.window if self.kind == "indicator" else self.radius
        return f"TestFunction({self.kind!r}, dim={self.dim}, {extra!r})"


@dataclass
class PairCorrelationCurve:
    """Cumulative pair correlation ``rho[0, r_k]`` with the counts behind it."""

    radii: np.ndarray
    pair_counts: np.ndarray
    n_points: int
    scale: float
    dim: int
    metadata: dict = field(default_factory=dict)

    @property
    def prefactor(self):
        if self.n_points < 2:
            return 0.0
        return self.scale / float(self.n_points) ** 2

    @property
    def values(self):
        return self.pair_counts * self.prefactor

    @property
    def poisson_ref(self):
        return omega_measure(self.dim, self.radii)

    def poisson_excess(self):
        """``(max_k |rho - omega|, r at the max)``."""
        dev = np.abs(self.values - self.poisson_ref)
        k = int(np.argmax(dev))
        return float(dev[k]), float(self.radii[k])

    def sub_poisson_excess(self):
        """``(max_k (rho - omega), r at the max)``; positive means above Poisson."""
        dev = self.values - self.poisson_ref
        k = int(np.argmax(dev))
        return float(dev[k]), float(self.radii[k])

    def to_rows(self):
        rows = []
        for r, v, c, w in zip(self.radii, self.values, self.pair_counts, self.poisson_ref):
            rows.append((float(r), float(v), int(c), float(w), self.n_points, float(self.scale)))
        return rows

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["r", "rho", "pair_count", "omega_ref", "N", "M"])
            for r, v, c, o, n, m in self.to_rows():
                w.writerow([f"{r:.17g}", f"{v:.17g}", c, f"{o:.17g}", n, f"{m:.17g}"])


class _Setup:
    """Kernel arguments for one (points, space, frame, scale) combination."""

    def __init__(self, points, space, frame, M, reach):
        self.space = space
        N = len(points)
        if isinstance(space, UnitAreaSphere):
            d = space.dim
        else:
            d = points.shape[1]
        self.d = d
        self.mroot = M ** (1.0 / d)
        D = points.shape[1]
        self.B = np.eye(D)
        self.Binv = np.eye(D)
        self.shifts = np.zeros((0, D))
        self.sum_shifts = np.zeros((0, D))
        self.half_sq = 0.0
        self.radius = 0.0
        self.F = np.eye(D).reshape(1, D, D)
        self.per_point = False
        self.X = np.ascontiguousarray(points, dtype=float)
        if isinstance(space, FlatTorus):
            if frame is not None and not _is_identity(frame):
                raise ValueError("tori use the identity frame")
            self.cutoff = reach / self.mroot
            self.B = space.basis
            self.Binv = space.inv_basis
            self.shifts = space._search_shifts
            self.half_sq = (0.5 * space.shortest_vector) ** 2
            if self.cutoff >= 0.5 * space.shortest_vector:
                self.kind = _cells.TORUS_SUM
                self.sum_shifts = space.lattice_vectors(self.cutoff + space.cell_radius)
            else:
                self.kind = _cells.TORUS
        elif isinstance(space, UnitAreaSphere):
            if frame is not None:
                raise ValueError("spheres use the geodesic distance without a frame")
            self.kind = _cells.SPHERE
            self.radius = space.radius
            self.cutoff = reach / self.mroot
        else:
            self.kind = _cells.EUCLID
            if frame is None:
                frame = FrameField.identity(d)
            if frame.dim != d:
                raise ValueError("frame dimension does not match the points")
            self.F = np.ascontiguousarray(frame.matrices(self.X))
            self.per_point = not frame.is_constant
            inv = frame.inverse_norms(self.X) if N else np.ones(1)
            self.cutoff = reach / self.mroot * float(np.max(inv))
        self.N = N
        self.diag = bool(np.count_nonzero(self.B - np.diag(np.diag(self.B))) == 0)
        # conservative squared bound in the kernels' pre-metric
        if self.kind == _cells.SPHERE:
            half = min(self.cutoff / (2 * self.radius), math.pi / 2)
            self.qcut = (2 * self.radius * math.sin(half)) ** 2 * (1 + 1e-9) + 1e-300
        elif self.kind == _cells.EUCLID:
            self.qcut = (reach / self.mroot) ** 2 * (1 + 1e-9)
        else:
            self.qcut = self.cutoff**2 * (1 + 1e-9)

    def grid(self):
        """Cell list for this setup, or ``None`` when all pairs must be visited."""
        if self.kind == _cells.TORUS_SUM:
            return None
        if self.kind == _cells.TORUS:
            coords = self.space.fractional(self.X)
            ext = self.cutoff * np.linalg.norm(self.Binv, axis=0)
            return _cells.CellGrid(coords, self.cutoff, periodic=True, extents=ext)
        if self.kind == _cells.SPHERE:
            R = self.radius
            half = min(self.cutoff / (2 * R), math.pi / 2)
            chord = 2 * R * math.sin(half) * (1 + 1e-9) + 1e-15
            lo = -np.full(self.X.shape[1], R * (1 + 1e-9))
            return _cells.CellGrid(self.X, chord, lo=lo, hi=-lo)
        return _cells.CellGrid(self.X, self.cutoff)

    def grid_coords(self, Y):
        if self.kind in (_cells.TORUS, _cells.TORUS_SUM):
            return self.space.fractional(Y)
        return Y


def _is_identity(frame):
    return frame.is_constant and np.allclose(frame.factor * frame.matrix, np.eye(frame.dim), rtol=0, atol=0)


def _count_curve(setup, radii, engine):
    K = len(radii)
    if setup.N < 2:
        return np.zeros(K, np.int64)
    grid = setup.grid() if engine == "cells" else None
    if grid is None:
        n_chunks = max(1, min(setup.N, 8 * numba.get_num_threads()))
        bins = _cells.count_brute(
            setup.kind, setup.diag, setup.X, setup.F, setup.per_point, setup.B, setup.Binv,
            setup.shifts, setup.half_sq, setup.sum_shifts, setup.radius, setup.mroot, radii,
            setup.qcut, n_chunks,
        )
    else:
        Xs = np.ascontiguousarray(setup.X[grid.order])
        Fs = np.ascontiguousarray(setup.F[grid.order]) if setup.per_point else setup.F
        bins = _cells.count_cells(
            setup.kind, setup.diag, Xs, Fs, setup.per_point, setup.B, setup.Binv, setup.shifts,
            setup.half_sq, setup.radius, setup.mroot, radii, setup.qcut, grid.cell_start,
            grid.strides, grid.nbr, grid.chunks(),
        )
    return np.cumsum(bins.sum(axis=0)[:K])


def _curve(points, space, frame, M, radii, engine, name):
    if engine not in ("cells", "brute"):
        raise ValueError(f"engine must be 'cells' or 'brute', got {engine!r}")
    M = check_scale(M)
    radii = check_radii(radii)
    X = check_points(points, space)
    if len(X) < 2:
        warnings.warn(f"{name}: fewer than two points, curve is identically zero", stacklevel=3)
    setup = _Setup(X, space, frame, M, float(radii[-1]))
    counts = _count_curve(setup, radii, engine)
    meta = {"space": space.to_json(), "engine": engine}
    if frame is not None:
        meta["frame"] = frame.to_json()
    if setup.kind == _cells.TORUS_SUM:
        meta["lattice_sum"] = True
    return PairCorrelationCurve(radii, counts, len(X), M, setup.d, meta)


def pc_distance_curve(points, frame, M, radii=None, space=None, engine="cells"):
    """Distance pair correlation on a Euclidean domain.

    Parameters
    ----------
    points : array_like, shape (n, d)
    frame : FrameField or None
        ``None`` means the identity frame.
    M : float
        Scale; correlations are measured at lengths ``M**(-1/d)``.
    radii : array_like, optional
        Ascending radius grid; defaults to 100 equal bins on ``[0, 5]``.
    space : EuclideanDomain, optional
        Used for membership validation; defaults to the points' bounding box.
    """
    X = np.asarray(points, float)
    if X.ndim == 1:
        X = X[:, None]
    if space is None:
        if len(X):
            lo, hi = X.min(axis=0), X.max(axis=0)
            space = _BoundingBox(lo, hi)
        else:
            space = _BoundingBox(np.zeros(X.shape[1] or 1), np.ones(X.shape[1] or 1))
    if not isinstance(space, EuclideanDomain):
        raise TypeError("pc_distance_curve works on Euclidean domains")
    return _curve(X, space, frame, M, radii, engine, "pc_distance_curve")


def pc_torus_curve(points, torus, M, radii=None, engine="cells"):
    """Lattice-summed distance pair correlation on a flat torus.

    While ``r_max * M**(-1/d)`` is below half the shortest lattice vector
    this is the minimum-image count; beyond that every lattice image within
    range is counted.
    """
    if not isinstance(torus, FlatTorus):
        raise TypeError("pc_torus_curve needs a FlatTorus")
    return _curve(points, torus, None, M, radii, engine, "pc_torus_curve")


def pc_sphere_curve(points, sphere, M, radii=None, engine="cells"):
    """Geodesic pair correlation on a unit-volume sphere."""
    if not isinstance(sphere, UnitAreaSphere):
        raise TypeError("pc_sphere_curve needs a UnitAreaSphere")
    R = sphere.radius
    if radii is not None and float(np.max(radii)) * M ** (-1.0 / sphere.dim) >= math.pi * R:
        warnings.warn("largest radius reaches past the antipode", stacklevel=2)
    return _curve(points, sphere, None, M, radii, "cells" if engine == "cells" else engine,
                  "pc_sphere_curve")


def pc_brute_force(points, space, frame, M, radii=None):
    """All-pairs reference for the accelerated curves (same counts, O(N^2) time)."""
    if isinstance(space, EuclideanDomain):
        return _curve(points, space, frame, M, radii, "brute", "pc_brute_force")
    return _curve(points, space, None, M, radii, "brute", "pc_brute_force")


def pair_correlation_curve(points, space, M, radii=None, frame=None, engine="cells"):
    """Dispatch to the curve for ``space``'s geometry."""
    if isinstance(space, FlatTorus):
        if frame is not None and not _is_identity(frame):
            raise ValueError("tori use the identity frame")
        return pc_torus_curve(points, space, M, radii, engine)
    if isinstance(space, UnitAreaSphere):
        if frame is not None:
            raise ValueError("spheres use the geodesic distance without a frame")
        return pc_sphere_curve(points, space, M, radii, engine)
    return pc_distance_curve(points, frame, M, radii, space, engine)


class _BoundingBox(EuclideanDomain):
    kind = "points-bbox"

    def __init__(self, lo, hi):
        self.lo = np.asarray(lo, float)
        self.hi = np.asarray(hi, float)
        self.dim = len(self.lo)

    def contains(self, X, tol=0.0):
        return np.ones(len(X), dtype=bool)

    def bounding_box(self):
        return self.lo, self.hi

    def to_json(self):
        return {"kind": "points-bbox", "lo": self.lo.tolist(), "hi": self.hi.tolist()}


# -- general test functions -------------------------------------------------


def _pair_candidates(setup, engine):
    """Ordered pairs (i, j), i != j, that can reach the test-function support."""
    N = setup.N
    grid = setup.grid() if engine == "cells" else None
    if grid is None:
        I, J = np.meshgrid(np.arange(N), np.arange(N), indexing="ij")
        mask = I != J
        return I[mask], J[mask]
    Xs = np.ascontiguousarray(setup.X[grid.order])
    kind = _cells.EUCLID if setup.kind == _cells.EUCLID else setup.kind
    I, J = _cells.cross_pairs(
        kind, setup.diag, setup.X, grid.cell_coords(setup.grid_coords(setup.X)), grid, Xs, True,
        setup.B, setup.Binv, setup.shifts, setup.half_sq, setup.radius,
        setup.cutoff * (1 + 1e-9),
    )
    return I, J


def _torus_images(space, V0, cutoff):
    """Expand reduced displacements into every lattice image within ``cutoff``."""
    S = V0 @ space.inv_basis
    S -= np.rint(S)
    V = S @ space.basis
    shifts = space.lattice_vectors(cutoff + space.cell_radius)
    rows, vecs = [], []
    for m in shifts:
        W = V + m
        keep = np.flatnonzero((W**2).sum(axis=1) <= (cutoff * (1 + 1e-9)) ** 2)
        rows.append(keep)
        vecs.append(W[keep])
    rows = np.concatenate(rows) if rows else np.zeros(0, np.int64)
    vecs = np.concatenate(vecs) if vecs else np.zeros((0, space.dim))
    return rows, vecs


def _reduce_sum(f, values, order_keys, prefactor):
    if f.is_indicator:
        return prefactor * int(np.count_nonzero(values))
    order = np.lexsort(order_keys[::-1])
    return prefactor * math.fsum(values[order])


def pc_euclidean(points, frame, M, f, space=None, engine="cells"):
    """``rho f = M/N^2 * sum_{j1 != j2} f(M^{1/d} A(x_j1)(x_j1 - x_j2))`` on a domain.

    Indicator test functions are counted exactly; smooth ones are summed in
    ``(j1, j2)`` order with exactly rounded summation.
    """
    X = np.asarray(points, float)
    if X.ndim == 1:
        X = X[:, None]
    M = check_scale(M)
    if space is not None:
        X = check_points(X, space)
    N = len(X)
    if N < 2:
        warnings.warn("pc_euclidean: fewer than two points", stacklevel=2)
        return 0.0
    if f.support_radius == 0:
        return 0.0
    setup = _Setup(X, space if space is not None else _BoundingBox(X.min(0), X.max(0)),
                   frame, M, f.support_radius)
    I, J = _pair_candidates(setup, engine)
    F = setup.F[I] if setup.per_point else setup.F[0]
    dX = X[I] - X[J]
    if setup.per_point:
        Y = setup.mroot * np.einsum("nab,nb->na", F, dX)
    else:
        Y = setup.mroot * dX @ F.T
    vals = f(Y)
    return _reduce_sum(f, vals, (I, J), M / N**2)


def pc_torus(points, torus, M, f, engine="cells"):
    """Lattice-summed ``rho f = M/N^2 * sum_{j1 != j2} sum_m f(M^{1/d}(x_j1 - x_j2 + m))``."""
    M = check_scale(M)
    X = check_points(points, torus)
    N = len(X)
    if N < 2:
        warnings.warn("pc_torus: fewer than two points", stacklevel=2)
        return 0.0
    if f.support_radius == 0:
        return 0.0
    setup = _Setup(X, torus, None, M, f.support_radius)
    I, J = _pair_candidates(setup, engine)
    rows, W = _torus_images(torus, X[I] - X[J], setup.cutoff)
    vals = f(setup.mroot * W)
    return _reduce_sum(f, vals, (I[rows], J[rows], rows), M / N**2)


class PairCorrelation(BaseEstimator):
    """Estimator wrapper: ``fit(X)`` computes the distance pair-correlation curve.

    Parameters
    ----------
    space : Space or str
        Where the points live (see :func:`space_from_json` for names).
    scale : float, optional
        Explicit scale ``M``.  When omitted, ``M = prefactor * N**theta``.
    theta, prefactor : float
        Scale rule used when ``scale`` is None.
    clamp : bool
        Clamp ``M`` to at most ``N``.
    radii : array_like, optional
        Radius grid (default: 100 equal bins on ``[0, 5]``).
    frame : FrameField, optional
        Frame for Euclidean domains.
    engine : {"cells", "brute"}

    Attributes
    ----------
    curve_ : PairCorrelationCurve
    scale_ : float
    n_points_ : int
    """

    def __init__(self, space="interval", scale=None, theta=1.0, prefactor=1.0, clamp=True,
                 radii=None, frame=None, engine="cells"):
        self.space = space
        self.scale = scale
        self.theta = theta
        self.prefactor = prefactor
        self.clamp = clamp
        self.radii = radii
        self.frame = frame
        self.engine = engine

    def _space(self):
        from .geometry import space_from_json

        return space_from_json(self.space) if isinstance(self.space, (str, dict)) else self.space

    def fit(self, X, y=None):
        space = self._space()
        X = check_points(X, space, name="X")
        n = len(X)
        if self.scale is not None:
            M = float(self.scale)
        else:
            if not (0 < self.theta <= 1):
                raise ValueError("theta must lie in (0, 1]")
            M = self.prefactor * max(n, 1) ** self.theta
        if self.clamp:
            M = min(M, max(n, 1))
        self.curve_ = pair_correlation_curve(X, space, M, self.radii, self.frame, self.engine)
        self.scale_ = M
        self.n_points_ = n
        return self

    def poisson_excess(self):
        check_is_fitted(self, "curve_")
        return self.curve_.poisson_excess()

    def sub_poisson_excess(self):
        check_is_fitted(self, "curve_")
        return self.curve_.sub_poisson_excess()
