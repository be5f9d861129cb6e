"""Triangular point arrays and the families that generate them.

A triangular array has rows ``xi_i1, ..., xi_iN_i`` with strictly increasing
row sizes ``N_i``.  A sequence ``(x_j)`` becomes an array by taking row ``i``
to be its first ``N_i`` terms, so every sequence family below has the prefix
property: row ``i`` is the beginning of row ``i + 1``.

Fractional parts of ``j**k * alpha`` and ``p_j * alpha`` are exact for the
double ``alpha`` actually used: a finite double is a dyadic rational
``A / 2**P``, and the residue ``j**k * A mod 2**P`` is computed in integer
arithmetic before a single rounding to double.
"""

from __future__ import annotations

import math
import warnings

import mpmath
import numpy as np

from .geometry import Ball, Box, FlatTorus, Space, UnitAreaSphere, sample_uniform, space_from_json

__all__ = [
    "ALPHA_TAGS",
    "resolve_alpha",
    "RowSchedule",
    "ArrayFamily",
    "Kronecker",
    "PolyFrac",
    "SqrtFrac",
    "PrimeFrac",
    "Grid",
    "RandomUniform",
    "BallRescaled",
    "TriangularArray",
    "generate_row",
    "prime_sieve",
    "family_from_json",
    "frac_dyadic",
]

_ONE_MINUS = float(np.nextafter(1.0, 0.0))


def _golden():
    return (1 + mpmath.sqrt(5)) / 2


ALPHA_TAGS = {
    "sqrt2": lambda: mpmath.sqrt(2),
    "sqrt3": lambda: mpmath.sqrt(3),
    "pi": lambda: +mpmath.pi,
    "e": lambda: +mpmath.e,
    "golden": _golden,
}


def resolve_alpha(alpha):
    """Turn a tag (``"sqrt2"``, ``"pi"``, ``"golden"``...), decimal string or number into a float.

    Tags and decimal strings are evaluated with 50 significant digits and
    rounded once to double precision.
    """
    if isinstance(alpha, str):
        key = alpha.strip().lower()
        with mpmath.workdps(50):
            if key in ALPHA_TAGS:
                value = float(ALPHA_TAGS[key]())
            else:
                try:
                    value = float(mpmath.mpf(key))
                except (ValueError, TypeError):
                    raise ValueError(
                        f"alpha {alpha!r} is neither a number nor one of {sorted(ALPHA_TAGS)}"
                    ) from None
    else:
        value = float(alpha)
    if not math.isfinite(value):
        raise ValueError(f"alpha must be finite, got {alpha!r}")
    return value


def _alpha_vector(alpha):
    if isinstance(alpha, (str, int, float, np.floating, np.integer)):
        return np.array([resolve_alpha(alpha)])
    vals = [resolve_alpha(a) for a in alpha]
    if not vals:
        raise ValueError("alpha vector is empty")
    return np.array(vals)


def frac_dyadic(m, alpha):
    """``<m * alpha>`` exactly for non-negative integers ``m`` (array) and a double ``alpha``.

    The result is the exact fractional part rounded once to double, and is
    clamped below 1 so it always lies in ``[0, 1)``.
    """
    m = np.asarray(m)
    A, Q = float(alpha).as_integer_ratio()
    P = Q.bit_length() - 1  # Q == 2**P
    if P == 0:
        return np.zeros(m.shape)
    A %= Q
    if P <= 64 and m.dtype.kind in "iu" and (m.size == 0 or m.min() >= 0):
        with np.errstate(over="ignore"):
            r = m.astype(np.uint64) * np.uint64(A)  # wraps mod 2**64
        if P < 64:
            r &= np.uint64((1 << P) - 1)
        out = r.astype(np.float64) * 2.0**-P
    else:
        out = np.array([(int(v) * A % Q) / Q for v in m.ravel()], float).reshape(m.shape)
    return np.minimum(out, _ONE_MINUS)


def _int_power_mod64(j, k):
    """``j**k mod 2**64`` for a uint64 array (wrapping multiplication)."""
    j = j.astype(np.uint64)
    out = np.ones_like(j)
    with np.errstate(over="ignore"):
        for _ in range(k):
            out *= j
    return out


# -- schedules ---------------------------------------------------------------


class RowSchedule:
    """Strictly increasing row sizes ``N_0 < N_1 < ...``.

    Use :meth:`explicit`, :meth:`geometric` (``ceil(N_0 * g**i)``) or
    :meth:`powers_of_two` (``2**(k0 + i)``).
    """

    def __init__(self, values, kind="explicit", params=None):
        values = [int(v) for v in values]
        if not values:
            raise ValueError("a schedule needs at least one row")
        if values[0] < 1:
            raise ValueError("row sizes must be positive")
        if any(b <= a for a, b in zip(values, values[1:])):
            raise ValueError(f"row sizes must be strictly increasing, got {values}")
        self.values = values
        self.kind = kind
        self.params = dict(params or {"values": values})

    @classmethod
    def explicit(cls, values):
        return cls(values)

    @classmethod
    def geometric(cls, n0, ratio, n_rows):
        if ratio <= 1:
            raise ValueError("geometric ratio must exceed 1")
        vals = [math.ceil(n0 * ratio**i - 1e-9) for i in range(int(n_rows))]
        return cls(vals, "geometric", {"n0": n0, "ratio": ratio, "n_rows": int(n_rows)})

    @classmethod
    def powers_of_two(cls, k0, n_rows):
        vals = [2 ** (int(k0) + i) for i in range(int(n_rows))]
        return cls(vals, "powers_of_two", {"k0": int(k0), "n_rows": int(n_rows)})

    def __len__(self):
        return len(self.values)

    def __getitem__(self, i):
        return self.values[i]

    def __iter__(self):
        return iter(self.values)

    def __repr__(self):
        return f"RowSchedule({self.kind}, {self.values})"

    def to_json(self):
        return {"kind": self.kind, **self.params}

    @classmethod
    def from_json(cls, obj):
        if isinstance(obj, (list, tuple)):
            return cls.explicit(obj)
        kind = obj.get("kind", "explicit")
        if kind == "explicit":
            return cls.explicit(obj["values"])
        if kind == "geometric":
            return cls.geometric(obj["n0"], obj["ratio"], obj["n_rows"])
        if kind == "powers_of_two":
            return cls.powers_of_two(obj["k0"], obj["n_rows"])
        raise ValueError(f"unknown schedule kind {kind!r}")


# -- families ----------------------------------------------------------------


class ArrayFamily:
    """Base class.  Sequence families implement ``terms(n)``; others ``row(N, i)``."""

    name = "family"
    is_sequence = True
    dim = 1

    def terms(self, n):
        raise NotImplementedError

    def row(self, N, i=None):
        return self.terms(N)

    def default_space(self):
        return Box.unit(self.dim)

    def params(self):
        return {}

    def to_json(self):
        return {"family": self.name, "params": self.params()}

    def __repr__(self):
        args = ", ".join(f"{k}={v!r}" for k, v in self.params().items())
        return f"{type(self).__name__}({args})"


class PolyFrac(ArrayFamily):
    """``x_j = <j**k * alpha>``, ``j = 1, 2, ...``; a vector ``alpha`` gives points in ``[0,1)^d``."""

    name = "poly_frac"

    def __init__(self, k=1, alpha="sqrt2"):
        if isinstance(k, bool) or int(k) != k or k < 1:
            raise ValueError(f"k must be an integer >= 1, got {k!r}")
        self.k = int(k)
        self.alpha_spec = alpha
        self.alpha = _alpha_vector(alpha)
        self.dim = len(self.alpha)

    def terms(self, n):
        j = np.arange(1, int(n) + 1, dtype=np.uint64)
        m = j if self.k == 1 else _int_power_mod64(j, self.k)
        cols = []
        for a in self.alpha:
            _, Q = float(a).as_integer_ratio()
            if Q.bit_length() - 1 <= 64:
                cols.append(frac_dyadic(m, a))
            else:  # tiny alpha: fall back to exact Python integers
                cols.append(frac_dyadic(np.array([int(v) ** self.k for v in range(1, int(n) + 1)],
                                                 dtype=object), a))
        return np.column_stack(cols) if cols else np.zeros((0, self.dim))

    def params(self):
        return {"k": self.k, "alpha": self.alpha_spec}


class Kronecker(PolyFrac):
    """``x_j = <j * alpha>`` (a Kronecker sequence; ``alpha`` may be a vector)."""

    name = "kronecker"

    def __init__(self, alpha="sqrt2"):
        super().__init__(1, alpha)

    def params(self):
        return {"alpha": self.alpha_spec}


class SqrtFrac(ArrayFamily):
    """``x_j = <sqrt(j)>``, ``j = 1, 2, ...``.

    Perfect squares contribute the point 0.  With ``skip_squares=True`` the
    sequence runs over non-square ``j`` only (the ``n``-th non-square is
    ``n + floor(1/2 + sqrt(n))``), which removes the atom at 0.
    """

    name = "sqrt_frac"

    def __init__(self, skip_squares=False):
        self.skip_squares = bool(skip_squares)

    def terms(self, n):
        j = np.arange(1, int(n) + 1, dtype=np.int64)
        if self.skip_squares:
            j = j + np.floor(0.5 + np.sqrt(j)).astype(np.int64)
        s = np.sqrt(j.astype(float))
        return np.minimum(s - np.floor(s), _ONE_MINUS)[:, None]

    def params(self):
        return {"skip_squares": self.skip_squares}


def prime_sieve(limit):
    """All primes ``<= limit`` in ascending order (sieve of Eratosthenes)."""
    limit = int(limit)
    if limit < 2:
        raise ValueError("limit must be at least 2")
    is_p = np.ones(limit + 1, dtype=bool)
    is_p[:2] = False
    for p in range(2, math.isqrt(limit) + 1):
        if is_p[p]:
            is_p[p * p :: p] = False
    return np.flatnonzero(is_p)


def _nth_prime_bound(n):
    # p_n < n (ln n + ln ln n) for n >= 6
    if n < 6:
        return 13
    return int(n * (math.log(n) + math.log(math.log(n)))) + 1


class PrimeFrac(ArrayFamily):
    """``x_j = <p_j * alpha>`` with ``p_j`` the ``j``-th prime.

    ``sieve_limit`` bounds the primes available; ``None`` sizes the sieve
    from the requested row.  A configured limit that is too small raises.
    """

    name = "prime_frac"

    def __init__(self, alpha="sqrt2", sieve_limit=None):
        self.alpha_spec = alpha
        self.alpha = _alpha_vector(alpha)
        self.dim = len(self.alpha)
        self.sieve_limit = None if sieve_limit is None else int(sieve_limit)
        self._primes = None

    def _primes_upto(self, n):
        limit = self.sieve_limit if self.sieve_limit is not None else _nth_prime_bound(n)
        if self._primes is None or self._primes_limit < limit:
            self._primes = prime_sieve(max(limit, 2))
            self._primes_limit = limit
        if len(self._primes) < n:
            raise ValueError(
                f"sieve limit {limit} gives only {len(self._primes)} primes, row needs {n}"
            )
        return self._primes[:n]

    def terms(self, n):
        p = self._primes_upto(int(n)).astype(np.uint64)
        return np.column_stack([frac_dyadic(p, a) for a in self.alpha])

    def params(self):
        return {"alpha": self.alpha_spec, "sieve_limit": self.sieve_limit}


class Grid(ArrayFamily):
    """``xi_ij = j / N_i`` for ``j = 0, ..., N_i - 1`` (not a sequence)."""

    name = "grid"
    is_sequence = False

    def row(self, N, i=None):
        return (np.arange(int(N)) / int(N))[:, None]

    def terms(self, n):
        raise TypeError("the grid family is not a sequence")


class RandomUniform(ArrayFamily):
    """Independent uniform points on ``space`` from one seeded stream (prefix property)."""

    name = "random_uniform"

    def __init__(self, space="interval", seed=0):
        self.space_spec = space
        self.space = space_from_json(space) if isinstance(space, (str, dict)) else space
        if not isinstance(self.space, Space):
            raise TypeError("space must be a Space or a space description")
        self.seed = seed
        self.dim = self.space.ambient_dim

    def terms(self, n):
        return sample_uniform(self.space, int(n), self.seed)

    def default_space(self):
        return self.space

    def params(self):
        spec = self.space_spec if isinstance(self.space_spec, (str, dict)) else self.space.to_json()
        return {"space": spec, "seed": self.seed}


def shifted_lattice_points(radius, shift=(0.5**0.5, 3**-0.5)):
    """Points of ``Z^2 + shift`` with norm ``< radius``, ordered by norm then angle."""
    shift = np.asarray(shift, float)
    k = int(math.ceil(radius + np.abs(shift).max())) + 1
    g = np.arange(-k, k + 1)
    P = np.stack(np.meshgrid(g, g, indexing="ij"), -1).reshape(-1, 2) + shift
    n2 = (P**2).sum(axis=1)
    P, n2 = P[n2 < radius**2], n2[n2 < radius**2]
    order = np.lexsort((np.arctan2(P[:, 1], P[:, 0]), n2))
    return P[order]


class BallRescaled(ArrayFamily):
    """Row ``i`` is ``{a_j / T_i : |a_j| < T_i}``, a subset of the open unit ball.

    ``points`` gives the sequence ``a_j`` (shape ``(n, d)``); ``points=None``
    uses ``Z^2 + shift`` ordered by norm.  Radii whose count does not exceed
    the previous row's are dropped (see ``dropped``), so row sizes increase.
    """

    name = "ball_rescaled"
    is_sequence = False

    def __init__(self, radii, points=None, shift=(0.5**0.5, 3**-0.5)):
        T = np.asarray(radii, float).ravel()
        if T.size == 0 or np.any(~np.isfinite(T)) or np.any(T <= 0):
            raise ValueError("radii T_i must be positive and finite")
        self.shift = tuple(float(s) for s in shift)
        self._user_points = points is not None
        if points is None:
            A = shifted_lattice_points(float(T.max()), self.shift)
        else:
            A = np.asarray(points, float)
            if A.ndim == 1:
                A = A[:, None]
        self.points = A
        self.dim = A.shape[1]
        norms = np.sqrt((A**2).sum(axis=1))
        kept, counts, dropped = [], [], []
        last = 0
        for t in T:
            c = int(np.count_nonzero(norms < t))
            if c > last:
                kept.append(float(t))
                counts.append(c)
                last = c
            else:
                dropped.append(float(t))
        if not kept:
            raise ValueError("no radius T_i contains any point")
        if dropped:
            warnings.warn(f"dropped radii without new points: {dropped}", stacklevel=2)
        self.radii = kept
        self.counts = counts
        self.dropped = dropped
        self._norms = norms

    def schedule(self):
        return RowSchedule(self.counts, "ball_rescaled", {"values": self.counts})

    def row(self, N, i=None):
        if i is None:
            i = self.counts.index(int(N))
        T = self.radii[i]
        X = self.points[self._norms < T] / T
        if len(X) != N:
            raise ValueError(f"row {i} has {len(X)} points, schedule asks for {N}")
        return X

    def default_space(self):
        return Ball(np.zeros(self.dim), 1.0)

    def params(self):
        p = {"radii": self.radii, "dropped": self.dropped}
        if self._user_points:
            p["points"] = self.points.tolist()
        else:
            p["shift"] = list(self.shift)
        return p


_FAMILIES = {
    "kronecker": Kronecker,
    "poly_frac": PolyFrac,
    "sqrt_frac": SqrtFrac,
    "prime_frac": PrimeFrac,
    "grid": Grid,
    "random_uniform": RandomUniform,
    "ball_rescaled": BallRescaled,
}


def family_from_json(obj):
    """Build a family from ``{"family": name, "params": {...}}``."""
    name = obj["family"]
    if name not in _FAMILIES:
        raise ValueError(f"unknown family {name!r}; choose from {sorted(_FAMILIES)}")
    params = dict(obj.get("params", {}))
    params.pop("dropped", None)
    return _FAMILIES[name](**params)


class TriangularArray:
    """A family together with its row schedule and the space its points live in.

    Parameters
    ----------
    family : ArrayFamily
    schedule : RowSchedule or sequence of int, optional
        Required except for :class:`BallRescaled`, whose radii fix the sizes.
    space : Space, optional
        Defaults to the family's natural space (the unit cube, the open unit
        ball for rescaled arrays, or the random family's space).
    """

    def __init__(self, family, schedule=None, space=None):
        if schedule is None:
            if not isinstance(family, BallRescaled):
                raise ValueError("a schedule is required for this family")
            schedule = family.schedule()
        elif not isinstance(schedule, RowSchedule):
            schedule = RowSchedule.explicit(schedule)
        if isinstance(family, BallRescaled) and list(schedule) != family.counts:
            raise ValueError("ball_rescaled row sizes are fixed by its radii")
        self.family = family
        self.schedule = schedule
        self.space = space if space is not None else family.default_space()
        if isinstance(self.space, UnitAreaSphere) and not isinstance(family, RandomUniform):
            raise ValueError("only random_uniform arrays live on spheres")
        if self.space.ambient_dim != family.dim:
            raise ValueError(
                f"family has dimension {family.dim}, space has {self.space.ambient_dim}"
            )

    def __len__(self):
        return len(self.schedule)

    def row(self, i):
        """Points ``xi_i1, ..., xi_iN_i`` of row ``i``, shape ``(N_i, d)``."""
        if not -len(self) <= i < len(self):
            raise IndexError(f"row {i} outside a schedule of {len(self)} rows")
        i = i % len(self)
        N = self.schedule[i]
        X = np.asarray(self.family.row(N, i), float)
        if X.shape != (N, self.family.dim):
            raise RuntimeError(f"family produced shape {X.shape}, expected {(N, self.family.dim)}")
        space = self.space
        if isinstance(space, FlatTorus):
            ok = np.all(np.isfinite(X))
        elif isinstance(space, UnitAreaSphere):
            ok = np.all(space.contains(X))
        else:
            ok = np.all(space.contains(X))
        if not ok:
            raise RuntimeError(f"row {i} has points outside {space.to_json()}")
        return X

    def rows(self):
        for i in range(len(self)):
            yield i, self.row(i)

    def to_json(self):
        return {**self.family.to_json(), "schedule": self.schedule.to_json(),
                "space": self.space.to_json()}


def generate_row(array, i):
    """Row ``i`` of a :class:`TriangularArray`."""
    return array.row(i)
