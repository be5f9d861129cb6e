"""Local counting statistics, discrepancy and the empirical verification pipelines.

For a row of ``N`` points, scale ``M`` and a bounded window ``D`` the local
count at ``x`` is

    mu^x D = M / N * #{j : M**(1/d) A(xi_j)(xi_j - x) in D}

(summed over lattice translates on a torus).  Its mean over ``x`` is
``vol D`` and its variance over ``x`` is tied to the pair correlation: on a
flat torus

    int (mu^x D - vol D)**2 dx = rho f - (vol D)**2 + M / N * vol D

exactly, with ``f(y) = vol((D + y) & D)`` the overlap of ``D`` with its
translate.  Monte Carlo estimates here draw ``x`` in fixed blocks with
independent seed streams, so results do not depend on how blocks are
scheduled.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from numba import njit, prange
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import _cells
from ._validation import check_points, check_radii, check_scale
from .arrays import TriangularArray
from .geometry import Ball, Box, EuclideanDomain, FlatTorus, UnitAreaSphere, Window, space_from_json
from .paircorr import TestFunction, _BoundingBox, _Setup, _torus_images, pair_correlation_curve, pc_torus
from .scaling import FrameField, ScaleSequence, SigmaMeasure, default_frame, scale_at

__all__ = [
    "SUBPOISSON_C",
    "MCEstimate",
    "LocalStatReport",
    "DiscrepancyReport",
    "VerdictRow",
    "VerdictTable",
    "mu_x",
    "mean_functional",
    "variance_functional",
    "lemma4_rhs_torus",
    "lemma4_check_torus",
    "empirical_vs_sigma",
    "star_discrepancy_1d",
    "tolerance_schedule",
    "calibrate_subpoisson_constant",
    "verify_theorem_forward",
    "verify_poisson",
    "find_poisson_scale",
    "LocalCounts",
    "StarDiscrepancy",
]

# 99th percentile (0.344) of max_r (rho - omega) / sqrt(M/N) over 1000 uniform random
# rows on [0, 1) (N = M = 1000, 100 bins on [0, 5]), rounded up; see
# calibrate_subpoisson_constant.  Fluctuations grow like sqrt(omega(r_max)), so other
# dimensions or radius grids need their own constant (about 0.86 on the unit square torus).
SUBPOISSON_C = 0.35
_N_BLOCKS = 16
_QUERY_CHUNK = 8192


@dataclass
class MCEstimate:
    """Monte Carlo mean with its standard error."""

    value: float
    stderr: float
    n: int
    seed: int | None = None

    def to_json(self):
        return asdict(self)


def _as_window(D, dim):
    if isinstance(D, Window):
        if D.dim != dim:
            raise ValueError(f"window has dimension {D.dim}, points have {dim}")
        return D
    return Window.ball(float(D), dim)


def _space_of(space, X):
    if space is None:
        if len(X) == 0:
            return _BoundingBox(np.zeros(X.shape[1]), np.ones(X.shape[1]))
        return _BoundingBox(X.min(axis=0), X.max(axis=0))
    if isinstance(space, (str, dict)):
        space = space_from_json(space)
    if isinstance(space, UnitAreaSphere):
        raise NotImplementedError("local counts are defined on Euclidean domains and tori")
    return space


# -- local counts ------------------------------------------------------------


def _window_counts(setup, D, Q, engine="cells"):
    """Integer counts ``#{(j, m) : mroot * A(xi_j)(xi_j + m - x_q) in D}`` per query."""
    nq = len(Q)
    out = np.zeros(nq, np.int64)
    if setup.N == 0 or nq == 0 or D.outer_radius() == 0:
        return out
    X = setup.X
    torus = setup.kind in (_cells.TORUS, _cells.TORUS_SUM)
    grid = setup.grid() if engine == "cells" else None
    Xs = np.ascontiguousarray(X[grid.order]) if grid is not None else None
    if grid is not None and setup.kind in (_cells.TORUS, _cells.EUCLID):
        Fs = np.ascontiguousarray(setup.F[grid.order]) if setup.per_point else setup.F
        ball = D.kind == "ball"
        lo = np.zeros(setup.d) if ball else np.ascontiguousarray(D.bounds[:, 0])
        hi = np.zeros(setup.d) if ball else np.ascontiguousarray(D.bounds[:, 1])
        Qc = np.ascontiguousarray(Q, dtype=float)
        return _cells.window_counts(
            setup.kind, setup.diag, Qc, np.ascontiguousarray(grid.cell_coords(setup.grid_coords(Qc))),
            Xs, Fs, setup.per_point, setup.B, setup.Binv, setup.shifts, setup.half_sq,
            setup.mroot, setup.cutoff * (1 + 1e-9), grid.cell_start, grid.strides, grid.nbr,
            ball, D.radius**2 if ball else 0.0, lo, hi,
        )
    for q0 in range(0, nq, _QUERY_CHUNK):
        Qc = np.ascontiguousarray(Q[q0 : q0 + _QUERY_CHUNK])
        if grid is None:
            I = np.repeat(np.arange(len(Qc)), setup.N)
            J = np.tile(np.arange(setup.N), len(Qc))
        else:
            I, J = _cells.cross_pairs(
                setup.kind, setup.diag, Qc, grid.cell_coords(setup.grid_coords(Qc)), grid, Xs,
                False, setup.B, setup.Binv, setup.shifts, setup.half_sq, setup.radius,
                setup.cutoff * (1 + 1e-9),
            )
        V = X[J] - Qc[I]
        if torus:
            rows, W = _torus_images(setup.space, V, setup.cutoff)
            inside = D.contains(setup.mroot * W)
            hits = I[rows[inside]]
        else:
            if setup.per_point:
                Y = np.einsum("nab,nb->na", setup.F[J], V)
            else:
                Y = V @ setup.F[0].T
            hits = I[D.contains(setup.mroot * Y)]
        out[q0 : q0 + len(Qc)] = np.bincount(hits, minlength=len(Qc))
    return out


def mu_x(points, M, D, x, frame=None, space=None, engine="cells"):
    """Normalised local count ``mu^x D`` at one or many locations ``x``.

    Parameters
    ----------
    points : array_like, shape (N, d)
    M : float
        Scale.
    D : Window or float
        Window; a number is read as the radius of a centred ball.
    x : array_like, shape (d,) or (n, d)
        Query locations.
    frame : FrameField, optional
        Frame on Euclidean domains (identity by default).
    space : Space, optional
        A :class:`FlatTorus` selects lattice-summed counts; default is the
        points' bounding box.

    Returns
    -------
    float or ndarray
        A float for a single location, else an array of length ``n``.
    """
    M = check_scale(M)
    X = np.asarray(points, float)
    if space is None and X.ndim == 1:
        X = X[:, None]
    sp = _space_of(space, X)
    X = check_points(X, sp)
    d = X.shape[1]
    D = _as_window(D, d)
    xq = np.asarray(x, float)
    single = xq.ndim == 0 or (xq.ndim == 1 and d > 1 and xq.size == d)
    Q = xq.reshape(-1, d)
    if isinstance(sp, FlatTorus):
        Q = sp.reduce(Q)
        frame = None
    N = len(X)
    if N == 0:
        vals = np.zeros(len(Q))
    else:
        setup = _Setup(X, sp, frame, M, D.outer_radius())
        vals = M / N * _window_counts(setup, D, Q, engine)
    return float(vals[0]) if single else vals


def _block_sizes(n, n_blocks):
    base, extra = divmod(int(n), n_blocks)
    return [base + (1 if b < extra else 0) for b in range(n_blocks)]


def _mc_mu(points, M, D, space, frame, sigma, n_mc, seed, engine):
    """``mu^x D`` at ``n_mc`` locations drawn from ``sigma`` (uniform on tori)."""
    if n_mc < 1000:
        raise ValueError(f"n_mc must be at least 1000, got {n_mc}")
    streams = np.random.SeedSequence(seed).spawn(_N_BLOCKS)
    if isinstance(space, FlatTorus):
        draw = space.sample_uniform
    else:
        if sigma is None:
            sigma = SigmaMeasure(frame, space)
        draw = sigma.sample
    Q = np.concatenate([draw(n, np.random.default_rng(ss))
                        for n, ss in zip(_block_sizes(n_mc, _N_BLOCKS), streams)])
    return mu_x(points, M, D, Q, frame=frame, space=space, engine=engine)


def _resolve_domain(points, space, frame, sigma):
    if sigma is not None:
        space = sigma.domain if space is None else space
        frame = sigma.frame if frame is None else frame
    if space is None:
        raise ValueError("a space (or a sigma measure) is required")
    if isinstance(space, (str, dict)):
        space = space_from_json(space)
    if isinstance(space, FlatTorus):
        return space, None, None
    if isinstance(space, UnitAreaSphere):
        raise NotImplementedError("local counts are defined on Euclidean domains and tori")
    if frame is None:
        frame = default_frame(space)
    return space, frame, sigma


def _estimate(values, seed):
    n = len(values)
    se = float(np.std(values, ddof=1) / math.sqrt(n)) if n > 1 else float("inf")
    return MCEstimate(float(np.mean(values)), se, n, seed)


def mean_functional(points, M, D, space=None, frame=None, sigma=None, n_mc=100_000, seed=0,
                    engine="cells"):
    """Monte Carlo estimate of ``int mu^x D sigma(dx)`` (equal to ``vol D`` on a torus)."""
    space, frame, sigma = _resolve_domain(points, space, frame, sigma)
    D = _as_window(D, space.dim)
    vals = _mc_mu(points, M, D, space, frame, sigma, n_mc, seed, engine)
    return _estimate(vals, seed)


def variance_functional(points, M, D, space=None, frame=None, sigma=None, n_mc=100_000, seed=0,
                        engine="cells"):
    """Monte Carlo estimate of ``V(D) = int (mu^x D - vol D)**2 sigma(dx)``.

    Locations are drawn from ``sigma`` (uniform on a torus) in 16 blocks
    with seed streams spawned from ``seed``.
    """
    space, frame, sigma = _resolve_domain(points, space, frame, sigma)
    D = _as_window(D, space.dim)
    if D.volume() == 0:
        return MCEstimate(0.0, 0.0, int(n_mc), seed)
    vals = _mc_mu(points, M, D, space, frame, sigma, n_mc, seed, engine)
    return _estimate((vals - D.volume()) ** 2, seed)


@dataclass
class LocalStatReport:
    """Mean and variance of the local counts with the exact right-hand side."""

    n_points: int
    scale: float
    window: dict
    window_volume: float
    mean_estimate: MCEstimate
    variance_estimate: MCEstimate
    lemma4_rhs: float
    rho_f: float
    self_images: float
    z_score: float
    passed: bool
    seed: int | None
    discrepancy: float | None = None
    label: str = "empirical consistency"

    def to_json(self):
        out = asdict(self)
        out["mean_estimate"] = self.mean_estimate.to_json()
        out["variance_estimate"] = self.variance_estimate.to_json()
        return out


def lemma4_rhs_torus(points, torus, M, D, engine="cells"):
    """Exact ``int_T (mu^x D - vol D)**2 dx`` for a ball window ``D``.

    Returns ``(rhs, rho_f, self_images)``.  ``self_images`` collects the
    point-with-its-own-translate terms ``M/N * sum_{m != 0} f(M**(1/d) m)``,
    which vanish unless ``2 r M**(-1/d)`` reaches a lattice vector.
    """
    M = check_scale(M)
    X = check_points(points, torus)
    D = _as_window(D, torus.dim)
    if D.kind != "ball":
        raise ValueError("the exact identity is implemented for ball windows")
    N = len(X)
    vol = D.volume()
    if N == 0:
        return float("nan"), 0.0, 0.0
    f = TestFunction.overlap(torus.dim, D.radius)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rho_f = pc_torus(X, torus, M, f, engine)
    mroot = M ** (1.0 / torus.dim)
    m = torus.lattice_vectors(2 * D.radius / mroot * (1 + 1e-9))
    m = m[(m**2).sum(axis=1) > 0]
    self_images = M / N * math.fsum(f(mroot * m)) if len(m) else 0.0
    return rho_f + self_images - vol**2 + M / N * vol, rho_f, self_images


def lemma4_check_torus(points, torus, M, D, n_mc=100_000, seed=0, engine="cells", n_se=3.0):
    """Compare the Monte Carlo variance with its exact pair-correlation form.

    ``passed`` is ``|LHS - RHS| <= n_se * stderr`` (plus 1e-12 when the
    standard error vanishes, as for a single point).
    """
    X = check_points(points, torus)
    D = _as_window(D, torus.dim)
    rhs, rho_f, self_images = lemma4_rhs_torus(X, torus, M, D, engine)
    vals = _mc_mu(X, M, D, torus, None, None, n_mc, seed, engine)
    mean = _estimate(vals, seed)
    var = _estimate((vals - D.volume()) ** 2, seed)
    gap = abs(var.value - rhs)
    z = gap / var.stderr if var.stderr > 0 else (0.0 if gap <= 1e-12 else math.inf)
    return LocalStatReport(
        n_points=len(X), scale=float(M), window=D.to_json(), window_volume=D.volume(),
        mean_estimate=mean, variance_estimate=var, lemma4_rhs=float(rhs), rho_f=float(rho_f),
        self_images=float(self_images), z_score=float(z),
        passed=bool(gap <= n_se * var.stderr + 1e-12), seed=seed,
    )


# -- discrepancy -------------------------------------------------------------


@dataclass
class DiscrepancyReport:
    """``sup_S |nu(S) - sigma(S)|`` over a family of test sets."""

    value: float
    witness: list
    family: str
    n_tests: int
    reference: str

    def to_json(self):
        return asdict(self)


@njit(parallel=True, cache=True)
def _anchored_counts(X, lo, Bs):
    n_tests = Bs.shape[0]
    out = np.zeros(n_tests, np.int64)
    d = X.shape[1]
    for t in prange(n_tests):
        c = 0
        for i in range(X.shape[0]):
            ok = True
            for a in range(d):
                if X[i, a] < lo[a] or X[i, a] >= Bs[t, a]:
                    ok = False
                    break
            if ok:
                c += 1
        out[t] = c
    return out


@njit(parallel=True, cache=True)
def _cap_counts(X, C, thresh):
    n_tests = C.shape[0]
    out = np.zeros(n_tests, np.int64)
    d = X.shape[1]
    for t in prange(n_tests):
        c = 0
        for i in range(X.shape[0]):
            s = 0.0
            for a in range(d):
                s += X[i, a] * C[t, a]
            if s >= thresh[t]:
                c += 1
        out[t] = c
    return out


def star_discrepancy_1d(x, cdf, lo=0.0):
    """Exact ``sup_b |#{x_j < b}/N - G(b)|`` over anchored intervals ``[lo, b)``.

    ``G`` is a continuous nondecreasing distribution function.  Returns
    ``(value, b)`` with ``b`` a point where the supremum is attained or
    approached.
    """
    x = np.sort(np.asarray(x, float).ravel())
    N = len(x)
    if N == 0:
        return 0.0, float(lo)
    v, first = np.unique(x, return_index=True)
    lt = first / N
    le = np.append(first[1:], N) / N
    G = np.asarray(cdf(v), float)
    above = le - G  # b just to the right of v
    below = G - lt  # b = v
    k1, k2 = int(np.argmax(above)), int(np.argmax(below))
    if above[k1] >= below[k2]:
        return max(0.0, float(above[k1])), float(v[k1])
    return max(0.0, float(below[k2])), float(v[k2])


def _fibonacci_sphere(n):
    k = np.arange(n) + 0.5
    z = 1 - 2 * k / n
    phi = math.pi * (1 + 5**0.5) * k
    r = np.sqrt(1 - z * z)
    return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])


def empirical_vs_sigma(points, target, n_grid=1000, n_random=1000, seed=0, n_reference=200_000):
    """Discrepancy between the empirical measure of ``points`` and ``target``.

    Parameters
    ----------
    points : array_like, shape (N, d)
    target : Space or SigmaMeasure
        Uniform measure of a space, or a frame-induced measure on a domain.
    n_grid, n_random : int
        Number of deterministic and random test sets (dimension >= 2 and
        spheres; one-dimensional intervals use the exact supremum).
    n_reference : int
        Sample size for the Monte Carlo reference measure on balls and for
        non-uniform measures in dimension >= 2.

    Notes
    -----
    Test sets are boxes ``[lo, b)`` anchored at the lower corner (in lattice
    coordinates on a torus) and closed geodesic caps on a sphere.
    """
    sigma = target if isinstance(target, SigmaMeasure) else None
    space = sigma.domain if sigma is not None else target
    if isinstance(space, (str, dict)):
        space = space_from_json(space)
    X = check_points(points, space)
    N = len(X)
    rng = np.random.default_rng(seed)

    if isinstance(space, UnitAreaSphere):
        R = space.radius
        dim = space.ambient_dim
        n_c = max(1, int(round(n_grid / 10)))
        if dim == 3:
            centers = _fibonacci_sphere(n_c)
        else:
            centers = np.random.default_rng(np.random.SeedSequence([seed, 1])).standard_normal((n_c, dim))
            centers /= np.linalg.norm(centers, axis=1)[:, None]
        ang = math.pi * np.arange(1, 11) / 10
        C = np.repeat(centers, len(ang), axis=0)
        A = np.tile(ang, n_c)
        Cr = rng.standard_normal((n_random, dim))
        Cr /= np.linalg.norm(Cr, axis=1)[:, None]
        C = np.vstack([C, Cr])
        A = np.concatenate([A, math.pi * rng.random(n_random)])
        ref = space.cap_measure(A)
        emp = _cap_counts(X / R, np.ascontiguousarray(C), np.cos(A)) / max(N, 1)
        dev = np.abs(emp - ref) if N else ref
        k = int(np.argmax(dev))
        return DiscrepancyReport(float(dev[k]), C[k].tolist() + [float(A[k])], "caps", len(A),
                                 "closed form")

    if isinstance(space, FlatTorus):
        U = space.fractional(X)
        lo, hi = np.zeros(space.dim), np.ones(space.dim)
        uniform, box_like = True, True
    else:
        lo, hi = space.bounding_box()
        lo, hi = np.asarray(lo, float), np.asarray(hi, float)
        U = X
        uniform = sigma is None or sigma.uniform
        box_like = isinstance(space, Box) or (isinstance(space, Ball) and space.dim == 1)
    d = len(lo)

    if d == 1 and box_like:
        if uniform:
            def cdf(b):
                return np.clip((b - lo[0]) / (hi[0] - lo[0]), 0.0, 1.0)
        else:
            cdf = sigma.cdf_1d
        value, b = star_discrepancy_1d(U[:, 0], cdf, lo[0])
        return DiscrepancyReport(value, [b], "anchored intervals", N, "exact")

    m = max(1, int(math.ceil(n_grid ** (1.0 / d) - 1e-9)))
    axes = [lo[a] + (hi[a] - lo[a]) * np.arange(1, m + 1) / m for a in range(d)]
    Bg = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, d)
    Br = lo + (hi - lo) * rng.random((n_random, d))
    Bs = np.ascontiguousarray(np.vstack([Bg, Br]))
    if uniform and box_like:
        ref = np.prod((Bs - lo) / (hi - lo), axis=1)
        reference = "closed form"
    else:
        if sigma is None:
            sigma = SigmaMeasure.uniform_on(space)
        R = sigma.sample(n_reference, np.random.SeedSequence([seed, 2]))
        ref = _anchored_counts(np.ascontiguousarray(R), lo, Bs) / n_reference
        reference = f"monte carlo ({n_reference} samples)"
    emp = _anchored_counts(np.ascontiguousarray(U), lo, Bs) / max(N, 1)
    dev = np.abs(emp - ref) if N else ref
    k = int(np.argmax(dev))
    return DiscrepancyReport(float(dev[k]), Bs[k].tolist(), "anchored boxes", len(Bs), reference)


# -- verification pipelines --------------------------------------------------


def tolerance_schedule(N, M, C=SUBPOISSON_C, floor=0.02):
    """``eps = max(floor, C * sqrt(M / N))``: the sub-Poisson tolerance for a row."""
    return max(float(floor), float(C) * math.sqrt(float(M) / float(N)))


def calibrate_subpoisson_constant(N=1000, trials=1000, quantile=0.99, seed=0, radii=None,
                                  space=None):
    """Quantile of ``max_r (rho - omega) / sqrt(M/N)`` over uniform random rows with ``M = N``.

    With the defaults (``space`` the unit interval) this is how
    :data:`SUBPOISSON_C` was chosen (then rounded up).
    """
    if space is None:
        space = Box.unit(1)
    elif isinstance(space, (str, dict)):
        space = space_from_json(space)
    ratios = []
    for ss in np.random.SeedSequence(seed).spawn(trials):
        X = space.sample_uniform(N, np.random.default_rng(ss))
        curve = pair_correlation_curve(X, space, float(N), radii)
        ratios.append(curve.sub_poisson_excess()[0])
    return float(np.quantile(ratios, quantile))


@dataclass
class VerdictRow:
    i: int
    N: int
    M: float
    tolerance: float
    excess: float
    r_at: float
    discrepancy: float | None
    ok: bool


@dataclass
class VerdictTable:
    """Per-row results of a verification run; verdicts are empirical, never proofs."""

    check: str
    rows: list
    consistent: bool
    reasons: list
    violation: dict | None
    settings: dict = field(default_factory=dict)
    label: str = "empirical consistency"

    def to_json(self):
        out = asdict(self)
        out["rows"] = [asdict(r) for r in self.rows]
        return out

    def render(self):
        excess = "sub-Poisson excess" if self.check == "forward" else "Poisson excess"
        head = ["i", "N", "M", "tolerance", excess, "at r", "discrepancy", "ok"]
        body = []
        for r in self.rows:
            body.append([
                str(r.i), str(r.N), f"{r.M:.6g}", f"{r.tolerance:.4g}", f"{r.excess:.6g}",
                f"{r.r_at:.4g}", "-" if r.discrepancy is None else f"{r.discrepancy:.6g}",
                "yes" if r.ok else "no",
            ])
        widths = [max(len(h), *(len(b[c]) for b in body)) if body else len(h)
                  for c, h in enumerate(head)]
        lines = ["  ".join(h.rjust(w) for h, w in zip(head, widths))]
        lines += ["  ".join(x.rjust(w) for x, w in zip(b, widths)) for b in body]
        verdict = "consistent" if self.consistent else "inconsistent"
        lines.append(f"{self.label}: {verdict}")
        lines += [f"  {r}" for r in self.reasons]
        if self.violation:
            lines.append(f"  violation at N={self.violation['N']}, r={self.violation['r']:.6g}")
        return "\n".join(lines)


def _as_scale(scale, theta):
    if scale is None:
        return ScaleSequence(theta=theta)
    if isinstance(scale, ScaleSequence):
        return scale
    return ScaleSequence(values=list(np.atleast_1d(scale)))


def _row_curve(array, i, X, scale, frame, radii, engine):
    N = len(X)
    M = scale_at(scale, i, N)
    space = array.space
    fr = frame if isinstance(space, EuclideanDomain) else None
    return M, pair_correlation_curve(X, space, M, radii, fr, engine)


def _target(array, sigma):
    if sigma is not None:
        return sigma
    return array.space


def verify_theorem_forward(array, scale=None, theta=1.0, frame=None, sigma=None, radii=None,
                           C=SUBPOISSON_C, floor=0.02, engine="cells", seed=0, min_rows=3):
    """Sub-Poisson pair correlation along the rows, then shrinking discrepancy.

    Each row gets the sub-Poisson excess ``max_k (rho[0, r_k] - omega[0, r_k])``
    and the discrepancy of its empirical measure against ``sigma`` (uniform
    on the array's space by default).  The run is consistent when every
    excess is at most its tolerance and the discrepancy decreases strictly
    from row to row.
    """
    if not isinstance(array, TriangularArray):
        raise TypeError("array must be a TriangularArray")
    if len(array) < min_rows:
        raise ValueError(f"need at least {min_rows} rows, got {len(array)}")
    scale = _as_scale(scale, theta)
    radii = check_radii(radii)
    rows, reasons = [], []
    violation, worst = None, -math.inf
    prev = None
    for i, X in array.rows():
        M, curve = _row_curve(array, i, X, scale, frame, radii, engine)
        exc, r = curve.sub_poisson_excess()
        eps = tolerance_schedule(len(X), M, C, floor)
        disc = empirical_vs_sigma(X, _target(array, sigma), seed=seed).value
        ok = exc <= eps
        if not ok:
            reasons.append(f"row {i}: sub-Poisson excess {exc:.4g} > tolerance {eps:.4g} at r={r:.4g}")
            if exc - eps > worst:
                worst = exc - eps
                violation = {"i": i, "N": len(X), "r": r, "excess": exc}
        if prev is not None and not disc < prev:
            ok = False
            reasons.append(f"row {i}: discrepancy {disc:.4g} did not decrease from {prev:.4g}")
        prev = disc
        rows.append(VerdictRow(i, len(X), M, eps, exc, r, disc, ok))
    consistent = all(r.ok for r in rows)
    settings = {"scale": scale.to_json(), "C": C, "floor": floor, "radii_max": float(radii[-1]),
                "bins": len(radii), "engine": engine, "seed": seed}
    return VerdictTable("forward", rows, consistent, reasons, violation, settings)


def verify_poisson(array, scale=None, theta=1.0, frame=None, radii=None, C=SUBPOISSON_C,
                   floor=0.02, engine="cells", min_rows=3):
    """Poisson check along the rows: ``max_k |rho - omega| <= eps_i`` for every row."""
    if len(array) < min_rows:
        raise ValueError(f"need at least {min_rows} rows, got {len(array)}")
    scale = _as_scale(scale, theta)
    radii = check_radii(radii)
    rows, reasons = [], []
    violation, worst = None, -math.inf
    for i, X in array.rows():
        M, curve = _row_curve(array, i, X, scale, frame, radii, engine)
        exc, r = curve.poisson_excess()
        eps = tolerance_schedule(len(X), M, C, floor)
        ok = exc <= eps
        if not ok:
            reasons.append(f"row {i}: Poisson excess {exc:.4g} > tolerance {eps:.4g} at r={r:.4g}")
            if exc > worst:
                worst = exc
                violation = {"i": i, "N": len(X), "r": r, "excess": exc}
        rows.append(VerdictRow(i, len(X), M, eps, exc, r, None, ok))
    settings = {"scale": scale.to_json(), "C": C, "floor": floor, "radii_max": float(radii[-1]),
                "bins": len(radii), "engine": engine}
    return VerdictTable("poisson", rows, all(r.ok for r in rows), reasons, violation, settings)


def find_poisson_scale(array, theta_grid, frame=None, radii=None, tol=0.05, prefactor=1.0,
                       engine="cells"):
    """Largest ``theta`` whose last-row Poisson excess ``max_k |rho - omega|`` is ``<= tol``.

    Returns ``(theta or None, table)`` with one dict per ``theta``.  The
    threshold is empirical for this row size.
    """
    grid = [float(t) for t in theta_grid]
    for t in grid:
        if not (0 < t <= 1):
            raise ValueError(f"theta values must lie in (0, 1], got {t}")
    table = []
    if not grid:
        return None, table
    i = len(array) - 1
    X = array.row(i)
    radii = check_radii(radii)
    best = None
    for t in sorted(grid):
        seq = ScaleSequence(c=prefactor, theta=t)
        M, curve = _row_curve(array, i, X, seq, frame, radii, engine)
        exc, r = curve.poisson_excess()
        ok = exc <= tol
        table.append({"theta": t, "N": len(X), "M": M, "excess": exc, "r_at": r, "passed": ok})
        if ok:
            best = t
    return best, table


# -- estimators --------------------------------------------------------------


class LocalCounts(TransformerMixin, BaseEstimator):
    """``fit`` stores a point row; ``transform`` returns ``mu^x D`` at query locations.

    Parameters
    ----------
    window : Window or float
        A number means a centred ball of that radius.
    scale : float
    space : Space or str, optional
        A torus gives lattice-summed counts.
    frame : FrameField, optional
    engine : {"cells", "brute"}
    """

    def __init__(self, window=1.0, scale=1.0, space=None, frame=None, engine="cells"):
        self.window = window
        self.scale = scale
        self.space = space
        self.frame = frame
        self.engine = engine

    def fit(self, X, y=None):
        X = np.asarray(X, float)
        X2 = X[:, None] if X.ndim == 1 else X
        self.space_ = _space_of(self.space, X2)
        self.points_ = check_points(X2, self.space_)
        self.n_features_in_ = self.points_.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "points_")
        Q = np.asarray(X, float).reshape(-1, self.n_features_in_)
        vals = mu_x(self.points_, self.scale, self.window, Q, self.frame, self.space_, self.engine)
        return np.asarray(vals).reshape(-1, 1)


class StarDiscrepancy(BaseEstimator):
    """``fit(X)`` computes the discrepancy of ``X`` against the uniform measure of ``space``."""

    def __init__(self, space="interval", n_grid=1000, n_random=1000, seed=0):
        self.space = space
        self.n_grid = n_grid
        self.n_random = n_random
        self.seed = seed

    def fit(self, X, y=None):
        space = space_from_json(self.space) if isinstance(self.space, (str, dict)) else self.space
        report = empirical_vs_sigma(X, space, self.n_grid, self.n_random, self.seed)
        self.report_ = report
        self.discrepancy_ = report.value
        return self
