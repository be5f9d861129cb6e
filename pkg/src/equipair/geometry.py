"""Spaces that carry point arrays: Euclidean boxes and balls, flat tori, spheres.

Every space exposes ``dim``, ``volume()``, ``contains(X)``, ``distance(x, y)``,
``sample_uniform(n, seed)`` and a JSON description.  Points are always
``(n, dim)`` float arrays (``(n, dim + 1)`` embedding coordinates on spheres).
"""

from __future__ import annotations

import itertools
import math

import numpy as np
from scipy import special

__all__ = [
    "Space",
    "EuclideanDomain",
    "Box",
    "Ball",
    "FlatTorus",
    "UnitAreaSphere",
    "Window",
    "unit_ball_volume",
    "omega_measure",
    "ball_overlap",
    "torus_distance",
    "sphere_geodesic",
    "sample_uniform",
    "space_from_json",
]


def unit_ball_volume(d):
    """Lebesgue volume of the open unit ball in ``R^d``."""
    # V_d = 2 pi / d * V_{d-2} keeps V_1 = 2 and V_2 = pi exact
    d = int(d)
    v = 1.0 if d % 2 == 0 else 2.0
    for k in range(2 + d % 2, d + 1, 2):
        v *= 2 * math.pi / k
    return v


def omega_measure(d, r):
    """Pair correlation of a unit-intensity Poisson process: ``r^d vol B_1^d``.

    ``r`` may be a scalar or an array of radii.
    """
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise ValueError("radius must be non-negative")
    out = r**d * unit_ball_volume(d)
    return float(out) if out.ndim == 0 else out


def ball_overlap(d, r):
    """Volume of ``(B_1^d + r e) ∩ B_1^d`` for a unit vector ``e``.

    Closed forms in one and two dimensions; for ``d >= 3`` the lens is twice a
    spherical cap of height ``1 - r/2``, evaluated through the regularized
    incomplete beta function.  Vectorized over ``r``.
    """
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise ValueError("r must be non-negative")
    rc = np.minimum(r, 2.0)
    if d == 1:
        out = 2.0 - rc
    elif d == 2:
        half = rc / 2.0
        out = 2.0 * np.arccos(half) - half * np.sqrt(np.maximum(4.0 - rc * rc, 0.0))
    else:
        x = np.clip(1.0 - rc * rc / 4.0, 0.0, 1.0)
        out = unit_ball_volume(d) * special.betainc((d + 1) / 2.0, 0.5, x)
    out = np.where(r >= 2.0, 0.0, out)
    return float(out) if out.ndim == 0 else out


def _as_points(X, dim):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, dim) if dim > 1 or X.size == 0 else X.reshape(-1, 1)
    if X.ndim != 2 or X.shape[1] != dim:
        raise ValueError(f"expected points of shape (n, {dim}), got {X.shape}")
    return X


class Space:
    """Base class; subclasses fill in the geometry."""

    kind = "abstract"
    dim: int

    def volume(self):
        raise NotImplementedError

    def contains(self, X, tol=0.0):
        raise NotImplementedError

    def distance(self, x, y):
        raise NotImplementedError

    def sample_uniform(self, n, seed=None):
        raise NotImplementedError

    def to_json(self):
        raise NotImplementedError

    @property
    def ambient_dim(self):
        return self.dim

    def __repr__(self):
        return f"{type(self).__name__}({self.to_json()})"

    def __eq__(self, other):
        return type(self) is type(other) and self.to_json() == other.to_json()

    def __hash__(self):
        return hash(repr(self))


class EuclideanDomain(Space):
    """Bounded domain in ``R^d`` with a measure-zero boundary."""

    def bounding_box(self):
        raise NotImplementedError

    def distance(self, x, y):
        return float(np.linalg.norm(np.asarray(x, float) - np.asarray(y, float)))

    def neighborhood(self, eps):
        """The ``eps``-neighbourhood ``Ω + B_eps``, as a domain of the same kind
        for balls and as a membership predicate for boxes."""
        raise NotImplementedError


class Box(EuclideanDomain):
    """Axis-aligned box ``[a_1, b_1] x ... x [a_d, b_d]``."""

    kind = "box"

    def __init__(self, bounds):
        b = np.asarray(bounds, dtype=float).reshape(-1, 2)
        if np.any(b[:, 1] <= b[:, 0]):
            raise ValueError("box bounds must satisfy a_k < b_k")
        self.bounds = b
        self.dim = b.shape[0]

    @classmethod
    def unit(cls, d=1):
        return cls([[0.0, 1.0]] * d)

    def volume(self):
        return float(np.prod(self.bounds[:, 1] - self.bounds[:, 0]))

    def contains(self, X, tol=0.0):
        X = _as_points(X, self.dim)
        return np.all((X >= self.bounds[:, 0] - tol) & (X <= self.bounds[:, 1] + tol), axis=1)

    def bounding_box(self):
        return self.bounds[:, 0].copy(), self.bounds[:, 1].copy()

    def neighborhood(self, eps):
        lo, hi = self.bounding_box()

        def member(X):
            X = _as_points(X, self.dim)
            gap = np.maximum(np.maximum(lo - X, X - hi), 0.0)
            return np.sqrt((gap**2).sum(axis=1)) < eps

        return member

    def sample_uniform(self, n, seed=None):
        rng = np.random.default_rng(seed)
        lo, hi = self.bounding_box()
        return lo + (hi - lo) * rng.random((int(n), self.dim))

    def to_json(self):
        return {"kind": "box", "bounds": self.bounds.tolist()}


class Ball(EuclideanDomain):
    """Open ball of radius ``radius`` centred at ``center``."""

    kind = "ball"

    def __init__(self, center, radius):
        self.center = np.atleast_1d(np.asarray(center, dtype=float))
        self.radius = float(radius)
        if self.radius <= 0:
            raise ValueError("ball radius must be positive")
        self.dim = self.center.size

    def volume(self):
        return unit_ball_volume(self.dim) * self.radius**self.dim

    def contains(self, X, tol=0.0):
        X = _as_points(X, self.dim)
        return np.linalg.norm(X - self.center, axis=1) < self.radius + tol

    def bounding_box(self):
        return self.center - self.radius, self.center + self.radius

    def neighborhood(self, eps):
        return Ball(self.center, self.radius + eps)

    def sample_uniform(self, n, seed=None):
        # Sequential rejection from the bounding box: prefixes of the output
        # do not depend on n.
        rng = np.random.default_rng(seed)
        n = int(n)
        out = np.empty((n, self.dim))
        filled = 0
        lo, hi = self.bounding_box()
        while filled < n:
            batch = max(64, int(1.3 * (n - filled) * (2**self.dim) / unit_ball_volume(self.dim)))
            cand = lo + (hi - lo) * rng.random((batch, self.dim))
            keep = cand[self.contains(cand)]
            take = min(len(keep), n - filled)
            out[filled : filled + take] = keep[:take]
            filled += take
        return out

    def to_json(self):
        return {"kind": "ball", "center": self.center.tolist(), "radius": self.radius}


class FlatTorus(Space):
    """Flat torus ``R^d / L`` for a lattice ``L`` of unit covolume.

    Parameters
    ----------
    basis : array_like, shape (d, d)
        Rows generate the lattice.  ``|det| = 1`` is enforced to 1e-12.
    """

    kind = "torus"

    def __init__(self, basis=None, dim=None):
        if basis is None:
            basis = np.eye(1 if dim is None else dim)
        B = np.atleast_2d(np.asarray(basis, dtype=float))
        if B.shape[0] != B.shape[1]:
            raise ValueError("lattice basis must be square")
        det = abs(np.linalg.det(B))
        if abs(det - 1.0) > 1e-12:
            raise ValueError(f"lattice basis must have unit covolume, |det| = {det!r}")
        self.basis = B
        self.dim = B.shape[0]
        self.inv_basis = np.linalg.inv(B)
        # norm bound for reduced displacements (fractional coords in [-1/2, 1/2])
        self.cell_radius = 0.5 * float(np.linalg.norm(B, axis=1).sum())
        self.diameter = 2.0 * self.cell_radius
        self.shortest_vector = self._shortest_vector()
        self._search_shifts = self.lattice_vectors(2.0 * self.diameter)

    @classmethod
    def cubic(cls, d=1):
        return cls(np.eye(d))

    def _coefficient_bounds(self, radius):
        col = np.linalg.norm(self.inv_basis, axis=0)
        return np.floor(radius * col + 1e-12).astype(int)

    def lattice_vectors(self, radius):
        """All lattice vectors of norm at most ``radius`` (including zero)."""
        bounds = self._coefficient_bounds(radius)
        ranges = [range(-k, k + 1) for k in bounds]
        coeffs = np.array(list(itertools.product(*ranges)), dtype=float).reshape(-1, self.dim)
        vecs = coeffs @ self.basis
        keep = np.linalg.norm(vecs, axis=1) <= radius * (1 + 1e-12)
        vecs = vecs[keep]
        order = np.lexsort((*vecs.T[::-1], np.linalg.norm(vecs, axis=1)))
        return vecs[order]

    def _shortest_vector(self):
        r = float(np.linalg.norm(self.basis, axis=1).min())
        vecs = self.lattice_vectors(r)
        norms = np.linalg.norm(vecs, axis=1)
        return float(norms[norms > 0].min())

    def volume(self):
        return 1.0

    def contains(self, X, tol=0.0):
        X = _as_points(X, self.dim)
        return np.ones(len(X), dtype=bool)

    def fractional(self, X):
        """Coordinates in the basis, reduced to ``[0, 1)^d``."""
        U = _as_points(X, self.dim) @ self.inv_basis
        U -= np.floor(U)
        U[U >= 1.0] = 0.0
        return U

    def reduce(self, X):
        """Canonical representatives in the fundamental parallelepiped."""
        return self.fractional(X) @ self.basis

    def min_image(self, dX):
        """Shortest lattice translate of each displacement in ``dX``."""
        dX = _as_points(dX, self.dim)
        S = dX @ self.inv_basis
        S -= np.rint(S)
        V = S @ self.basis
        q = (V**2).sum(axis=1)
        far = q > (0.5 * self.shortest_vector) ** 2
        if np.any(far):
            cand = V[far, None, :] + self._search_shifts[None, :, :]
            k = np.argmin((cand**2).sum(axis=2), axis=1)
            V[far] = cand[np.arange(len(k)), k]
        return V

    def distance(self, x, y):
        return torus_distance(self, x, y)

    def sample_uniform(self, n, seed=None):
        rng = np.random.default_rng(seed)
        return rng.random((int(n), self.dim)) @ self.basis

    def to_json(self):
        return {"kind": "torus", "basis": self.basis.tolist()}


class UnitAreaSphere(Space):
    """Round sphere ``S^d`` in ``R^{d+1}`` scaled to unit Riemannian volume."""

    kind = "sphere"

    def __init__(self, dim=2):
        if dim < 1:
            raise ValueError("sphere dimension must be >= 1")
        self.dim = int(dim)
        area_unit = 2 * math.pi ** ((dim + 1) / 2) / math.gamma((dim + 1) / 2)
        self.radius = area_unit ** (-1.0 / dim)

    @property
    def ambient_dim(self):
        return self.dim + 1

    def volume(self):
        area_unit = 2 * math.pi ** ((self.dim + 1) / 2) / math.gamma((self.dim + 1) / 2)
        return area_unit * self.radius**self.dim

    def contains(self, X, tol=1e-9):
        X = _as_points(X, self.dim + 1)
        return np.abs(np.linalg.norm(X, axis=1) - self.radius) <= tol * max(self.radius, 1.0)

    def project(self, X):
        X = _as_points(X, self.dim + 1)
        nrm = np.linalg.norm(X, axis=1)
        if np.any(nrm == 0):
            raise ValueError("zero vector has no direction on the sphere")
        return X * (self.radius / nrm)[:, None]

    def distance(self, x, y):
        return sphere_geodesic(self, x, y)

    def cap_measure(self, angle):
        """Normalised volume of a geodesic cap of angular radius ``angle``."""
        a = np.clip(np.asarray(angle, dtype=float), 0.0, math.pi)
        half = 0.5 * special.betainc(self.dim / 2.0, 0.5, np.sin(a) ** 2)
        return np.where(a <= math.pi / 2, half, 1.0 - half)

    def sample_uniform(self, n, seed=None):
        rng = np.random.default_rng(seed)
        G = rng.standard_normal((int(n), self.dim + 1))
        if len(G) == 0:
            return G
        return self.project(G)

    def to_json(self):
        return {"kind": "sphere", "dim": self.dim}


class Window:
    """Bounded test set in ``R^d``: a centred ball of radius ``r`` or a box."""

    def __init__(self, kind, dim, radius=None, bounds=None):
        self.kind = kind
        self.dim = int(dim)
        if kind == "ball":
            if radius is None or radius < 0:
                raise ValueError("ball window needs radius >= 0")
            self.radius = float(radius)
        elif kind == "box":
            b = np.asarray(bounds, dtype=float).reshape(self.dim, 2)
            if np.any(b[:, 1] < b[:, 0]):
                raise ValueError("box window bounds must satisfy a_k <= b_k")
            self.bounds = b
        else:
            raise ValueError(f"unknown window kind {kind!r}")

    @classmethod
    def ball(cls, radius, dim):
        return cls("ball", dim, radius=radius)

    @classmethod
    def box(cls, bounds):
        b = np.asarray(bounds, dtype=float).reshape(-1, 2)
        return cls("box", b.shape[0], bounds=b)

    def volume(self):
        if self.kind == "ball":
            return unit_ball_volume(self.dim) * self.radius**self.dim
        return float(np.prod(self.bounds[:, 1] - self.bounds[:, 0]))

    def contains(self, Y):
        Y = _as_points(Y, self.dim)
        if self.kind == "ball":
            return (Y**2).sum(axis=1) < self.radius**2
        return np.all((Y >= self.bounds[:, 0]) & (Y < self.bounds[:, 1]), axis=1)

    def outer_radius(self):
        """Radius of the smallest origin-centred ball containing the set."""
        if self.kind == "ball":
            return self.radius
        corner = np.maximum(np.abs(self.bounds[:, 0]), np.abs(self.bounds[:, 1]))
        return float(np.linalg.norm(corner))

    def to_json(self):
        if self.kind == "ball":
            return {"kind": "ball", "radius": self.radius, "dim": self.dim}
        return {"kind": "box", "bounds": self.bounds.tolist()}

    def __repr__(self):
        return f"Window({self.to_json()})"


def torus_distance(T, x, y):
    """Minimum-image distance ``min_m ||x - y + m||`` on the torus ``T``."""
    dx = np.atleast_1d(np.asarray(x, float) - np.asarray(y, float)).reshape(1, T.dim)
    return float(np.linalg.norm(T.min_image(dx)[0]))


def sphere_geodesic(S, x, y):
    """Great-circle distance between two points of the sphere ``S``.

    Inputs are projected radially onto the sphere first.  The angle is taken
    as ``2 atan2(|u - v|, |u + v|)`` for unit vectors ``u, v``, which stays
    accurate for nearly equal and nearly antipodal points.
    """
    P = S.project(np.vstack([np.asarray(x, float), np.asarray(y, float)]))
    u, v = P / S.radius
    return float(S.radius * 2.0 * math.atan2(np.linalg.norm(u - v), np.linalg.norm(u + v)))


def sample_uniform(space, n, seed=None):
    """I.i.d. uniform points of ``space``; deterministic given ``seed``."""
    if n < 0:
        raise ValueError("n must be non-negative")
    return space.sample_uniform(n, seed)


def space_from_json(obj):
    """Inverse of ``Space.to_json``; also accepts the short names used by the CLI."""
    if isinstance(obj, str):
        short = {
            "interval": Box.unit(1),
            "square": Box.unit(2),
            "cube": Box.unit(3),
            "torus": FlatTorus.cubic(1),
            "circle": FlatTorus.cubic(1),
            "torus1": FlatTorus.cubic(1),
            "torus2": FlatTorus.cubic(2),
            "torus3": FlatTorus.cubic(3),
            "sphere": UnitAreaSphere(2),
            "disc": Ball([0.0, 0.0], 1.0),
        }
        if obj not in short:
            raise ValueError(f"unknown space name {obj!r}")
        return short[obj]
    kind = obj.get("kind")
    if kind == "box":
        return Box(obj["bounds"])
    if kind == "ball":
        return Ball(obj["center"], obj["radius"])
    if kind == "torus":
        if "basis" in obj:
            return FlatTorus(obj["basis"])
        return FlatTorus.cubic(int(obj.get("dim", 1)))
    if kind == "sphere":
        return UnitAreaSphere(int(obj.get("dim", 2)))
    raise ValueError(f"unknown space kind {kind!r}")
