"""Cell-list and all-pairs kernels for fixed-radius pair counting.

Both traversals call the same ``_pair_dist`` so that, for indicator
statistics, the two engines produce identical integer bin counts.  Bins are
accumulated per chunk of cells (or rows) and summed at the end, which makes
the result independent of the number of worker threads.
"""

import math

import numba
import numpy as np
from numba import njit, prange

EUCLID = 0
TORUS = 1
TORUS_SUM = 2
SPHERE = 3

_INFLATE = 1.0 + 1e-9


@njit(cache=True, inline="always")
def _reduce_torus(X, i, j, B, Binv, s, v):
    d = X.shape[1]
    for a in range(d):
        v[a] = X[i, a] - X[j, a]
    for b in range(d):
        t = 0.0
        for a in range(d):
            t += v[a] * Binv[a, b]
        s[b] = t - np.rint(t)
    q = 0.0
    for b in range(d):
        t = 0.0
        for a in range(d):
            t += s[a] * B[a, b]
        v[b] = t
        q += t * t
    return q


@njit(cache=True, inline="always")
def _pair_q(kind, diag, X, i, j, F, fi, B, Binv, shifts, half_sq, s, v):
    # Squared pre-metric: squared frame/torus distance, or squared chord on spheres.
    d = X.shape[1]
    if kind == EUCLID:
        for a in range(d):
            s[a] = X[i, a] - X[j, a]
        q = 0.0
        for a in range(d):
            t = 0.0
            for b in range(d):
                t += F[fi, a, b] * s[b]
            q += t * t
        return q
    elif kind == TORUS:
        if diag:
            q = 0.0
            for a in range(d):
                t = (X[i, a] - X[j, a]) * Binv[a, a]
                t = (t - np.rint(t)) * B[a, a]
                q += t * t
            return q
        q = _reduce_torus(X, i, j, B, Binv, s, v)
        if q <= half_sq:
            return q
        best = q
        for k in range(shifts.shape[0]):
            qq = 0.0
            for b in range(d):
                t = v[b] + shifts[k, b]
                qq += t * t
            if qq < best:
                best = qq
        return best
    else:
        q = 0.0
        for a in range(d):
            t = X[i, a] - X[j, a]
            q += t * t
        return q


@njit(cache=True, inline="always")
def _q_to_dist(kind, X, i, j, q, radius):
    if kind != SPHERE:
        return math.sqrt(q)
    dp = 0.0
    for a in range(X.shape[1]):
        t = X[i, a] + X[j, a]
        dp += t * t
    return radius * 2.0 * math.atan2(math.sqrt(q), math.sqrt(dp))


@njit(cache=True, inline="always")
def _pair_dist(kind, diag, X, i, j, F, fi, B, Binv, shifts, half_sq, radius, s, v):
    q = _pair_q(kind, diag, X, i, j, F, fi, B, Binv, shifts, half_sq, s, v)
    return _q_to_dist(kind, X, i, j, q, radius)


@njit(cache=True, inline="always")
def _bin_index(radii, x):
    lo = 0
    hi = radii.shape[0]
    while lo < hi:
        mid = (lo + hi) >> 1
        if radii[mid] < x:
            lo = mid + 1
        else:
            hi = mid
    return lo


@njit(parallel=True, cache=True)
def count_cells(kind, diag, X, F, per_point, B, Binv, shifts, half_sq, radius, mroot, radii,
                qcut, cell_start, strides, nbr, chunk_bounds):
    """Binned ordered-pair counts via the cell list (points sorted by cell)."""
    n_chunks = chunk_bounds.shape[0] - 1
    K = radii.shape[0]
    D = strides.shape[0]
    d = X.shape[1]
    rmax = radii[K - 1]
    n_off = 3**D
    out = np.zeros((n_chunks, K + 1), np.int64)
    for ch in prange(n_chunks):
        s = np.empty(d)
        v = np.empty(d)
        cc = np.empty(D, np.int64)
        for c in range(chunk_bounds[ch], chunk_bounds[ch + 1]):
            a0 = cell_start[c]
            a1 = cell_start[c + 1]
            if a0 == a1:
                continue
            rem = c
            for k in range(D):
                cc[k] = rem // strides[k]
                rem = rem % strides[k]
            for o in range(n_off):
                t = o
                c2 = 0
                ok = True
                for k in range(D):
                    nb = nbr[k, cc[k], t % 3]
                    t //= 3
                    if nb < 0:
                        ok = False
                        break
                    c2 += nb * strides[k]
                if not ok:
                    continue
                b0 = cell_start[c2]
                b1 = cell_start[c2 + 1]
                for i in range(a0, a1):
                    fi = i if per_point else 0
                    for j in range(b0, b1):
                        if i == j:
                            continue
                        q = _pair_q(kind, diag, X, i, j, F, fi, B, Binv, shifts, half_sq, s, v)
                        if q > qcut:
                            continue
                        sc = mroot * _q_to_dist(kind, X, i, j, q, radius)
                        if sc <= rmax:
                            out[ch, _bin_index(radii, sc)] += 1
    return out


@njit(parallel=True, cache=True)
def count_brute(kind, diag, X, F, per_point, B, Binv, shifts, half_sq, sum_shifts, radius,
                mroot, radii, qcut, n_chunks):
    """Binned ordered-pair counts by direct double loop.

    ``kind == TORUS_SUM`` adds one count per lattice image within range
    (lattice-summed statistic); other kinds count each pair once.
    """
    N = X.shape[0]
    K = radii.shape[0]
    d = X.shape[1]
    rmax = radii[K - 1]
    out = np.zeros((n_chunks, K + 1), np.int64)
    for ch in prange(n_chunks):
        s = np.empty(d)
        v = np.empty(d)
        lo = (ch * N) // n_chunks
        hi = ((ch + 1) * N) // n_chunks
        for i in range(lo, hi):
            fi = i if per_point else 0
            for j in range(N):
                if i == j:
                    continue
                if kind == TORUS_SUM:
                    _reduce_torus(X, i, j, B, Binv, s, v)
                    for k in range(sum_shifts.shape[0]):
                        qq = 0.0
                        for b in range(d):
                            t = v[b] + sum_shifts[k, b]
                            qq += t * t
                        sc = mroot * math.sqrt(qq)
                        if sc <= rmax:
                            out[ch, _bin_index(radii, sc)] += 1
                else:
                    q = _pair_q(kind, diag, X, i, j, F, fi, B, Binv, shifts, half_sq, s, v)
                    if q > qcut:
                        continue
                    sc = mroot * _q_to_dist(kind, X, i, j, q, radius)
                    if sc <= rmax:
                        out[ch, _bin_index(radii, sc)] += 1
    return out


@njit(cache=True)
def _cross_scan(kind, diag, Q, qcell, X, order, exclude_self, B, Binv, shifts, half_sq, radius,
                cutoff, cell_start, strides, nbr, counts, qi_out, j_out, fill):
    # One query at a time; ``fill`` selects counting or writing pass.
    D = strides.shape[0]
    d = X.shape[1]
    n_off = 3**D
    F = np.eye(d).reshape(1, d, d)
    s = np.empty(d)
    v = np.empty(d)
    Z = np.empty((2, d))
    pos = 0
    for q in range(Q.shape[0]):
        for a in range(d):
            Z[0, a] = Q[q, a]
        n_found = 0
        for o in range(n_off):
            t = o
            c2 = 0
            ok = True
            for k in range(D):
                nb = nbr[k, qcell[q, k], t % 3]
                t //= 3
                if nb < 0:
                    ok = False
                    break
                c2 += nb * strides[k]
            if not ok:
                continue
            for jj in range(cell_start[c2], cell_start[c2 + 1]):
                if exclude_self and order[jj] == q:
                    continue
                for a in range(d):
                    Z[1, a] = X[jj, a]
                dist = _pair_dist(kind, diag, Z, 0, 1, F, 0, B, Binv, shifts, half_sq, radius, s, v)
                if dist <= cutoff:
                    if fill:
                        qi_out[pos] = q
                        j_out[pos] = order[jj]
                        pos += 1
                    n_found += 1
        if not fill:
            counts[q] = n_found
    return pos


def _grid_shape(extents, cutoff, n_points, periodic):
    D = len(extents)
    w = cutoff * _INFLATE
    with np.errstate(divide="ignore", invalid="ignore"):
        n = np.where(extents > 0, np.floor(extents / w), 1).astype(np.int64)
    n = np.maximum(n, 1)
    max_cells = max(64, 4 * int(n_points))
    while np.prod(n.astype(float)) > max_cells:
        f = (np.prod(n.astype(float)) / max_cells) ** (1.0 / D)
        n = np.maximum(1, np.floor(n / max(f, 1.0 + 1e-3))).astype(np.int64)
    return n


class CellGrid:
    """Uniform bucketing of points with cells at least ``cutoff`` wide per axis.

    ``coords`` are the coordinates used for binning: raw positions for
    Euclidean domains and spheres, fractional coordinates for tori
    (``periodic=True``, cells wrap around).
    """

    def __init__(self, coords, cutoff, periodic=False, lo=None, hi=None, extents=None):
        coords = np.ascontiguousarray(coords, dtype=float)
        N, D = coords.shape
        self.periodic = periodic
        if periodic:
            # per-axis extents in fractional units, supplied by the caller
            self.lo = np.zeros(D)
            ext = np.asarray(extents, float)
            n = np.ones(D, np.int64)
            for k in range(D):
                n[k] = max(1, int(math.floor(1.0 / (ext[k] * _INFLATE)))) if ext[k] > 0 else 1
            cap = max(64, 4 * N)
            while np.prod(n.astype(float)) > cap:
                f = (np.prod(n.astype(float)) / cap) ** (1.0 / D)
                n = np.maximum(1, np.floor(n / max(f, 1.0 + 1e-3))).astype(np.int64)
            self.width = 1.0 / n
        else:
            lo = coords.min(axis=0) if lo is None else np.asarray(lo, float)
            hi = coords.max(axis=0) if hi is None else np.asarray(hi, float)
            ext = hi - lo
            n = _grid_shape(ext, cutoff, N, periodic)
            self.lo = lo
            self.width = np.where(n > 1, ext / n, np.maximum(ext, cutoff * _INFLATE) + 1.0)
            # cells must never be narrower than the cutoff
            self.width = np.maximum(self.width, cutoff * _INFLATE)
        self.ncell = n
        self.D = D
        strides = np.ones(D, np.int64)
        for k in range(D - 2, -1, -1):
            strides[k] = strides[k + 1] * n[k + 1]
        self.strides = strides
        cc = self.cell_coords(coords)
        flat = cc @ strides
        self.order = np.argsort(flat, kind="stable")
        counts = np.bincount(flat, minlength=int(np.prod(n)))
        self.cell_start = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        self.nbr = self._neighbor_table()

    def cell_coords(self, coords):
        cc = np.floor((coords - self.lo) / self.width).astype(np.int64)
        if self.periodic:
            cc %= self.ncell
        return np.clip(cc, 0, self.ncell - 1)

    def _neighbor_table(self):
        D = self.D
        m = int(self.ncell.max())
        nbr = -np.ones((D, m, 3), np.int64)
        for k in range(D):
            n = int(self.ncell[k])
            for c in range(n):
                if self.periodic:
                    cand = sorted({(c - 1) % n, c, (c + 1) % n})
                else:
                    cand = [x for x in (c - 1, c, c + 1) if 0 <= x < n]
                nbr[k, c, : len(cand)] = cand
        return nbr

    def chunks(self, n_chunks=None):
        n_cells = len(self.cell_start) - 1
        if n_chunks is None:
            n_chunks = 8 * numba.get_num_threads()
        n_chunks = max(1, min(n_chunks, n_cells))
        # balance chunks by point count
        targets = np.linspace(0, self.cell_start[-1], n_chunks + 1)
        bounds = np.searchsorted(self.cell_start, targets, side="left")
        bounds[0] = 0
        bounds[-1] = n_cells
        return np.unique(bounds).astype(np.int64)


def cross_pairs(kind, diag, queries, query_cells, grid, X_sorted, exclude_self, B, Binv, shifts,
                half_sq, radius, cutoff):
    """All (query, data) index pairs within ``cutoff`` found through ``grid``."""
    nq = len(queries)
    counts = np.zeros(nq, np.int64)
    dummy = np.zeros(0, np.int64)
    args = (kind, diag, np.ascontiguousarray(queries, float), np.ascontiguousarray(query_cells),
            X_sorted, grid.order, exclude_self, B, Binv, shifts, half_sq, radius, cutoff,
            grid.cell_start, grid.strides, grid.nbr)
    _cross_scan(*args, counts, dummy, dummy, False)
    total = int(counts.sum())
    qi = np.empty(total, np.int64)
    jj = np.empty(total, np.int64)
    _cross_scan(*args, counts, qi, jj, True)
    return qi, jj


@njit(parallel=True, cache=True)
def window_counts(kind, diag, Q, qcell, X, F, per_point, B, Binv, shifts, half_sq, mroot, cutoff,
                  cell_start, strides, nbr, w_ball, w_r2, w_lo, w_hi):
    """Per-query counts of data points ``j`` with ``mroot * F_j (x_j - q)`` in a window.

    Euclidean kinds use the frame; the torus kind uses the minimum-image
    displacement, which is the only translate within ``cutoff`` when the
    cutoff is below half the shortest lattice vector.  The window is the
    open ball of squared radius ``w_r2`` or the half-open box ``[w_lo, w_hi)``.
    """
    D = strides.shape[0]
    d = X.shape[1]
    n_off = 3**D
    cut2 = cutoff * cutoff
    out = np.zeros(Q.shape[0], np.int64)
    for q in prange(Q.shape[0]):
        s = np.empty(d)
        v = np.empty(d)
        y = np.empty(d)
        n_found = 0
        for o in range(n_off):
            t = o
            c2 = 0
            ok = True
            for k in range(D):
                nb = nbr[k, qcell[q, k], t % 3]
                t //= 3
                if nb < 0:
                    ok = False
                    break
                c2 += nb * strides[k]
            if not ok:
                continue
            for jj in range(cell_start[c2], cell_start[c2 + 1]):
                qq = 0.0
                if kind == TORUS:
                    for a in range(d):
                        v[a] = X[jj, a] - Q[q, a]
                    if diag:
                        for a in range(d):
                            tt = v[a] * Binv[a, a]
                            v[a] = (tt - np.rint(tt)) * B[a, a]
                            qq += v[a] * v[a]
                    else:
                        for b in range(d):
                            tt = 0.0
                            for a in range(d):
                                tt += v[a] * Binv[a, b]
                            s[b] = tt - np.rint(tt)
                        for b in range(d):
                            tt = 0.0
                            for a in range(d):
                                tt += s[a] * B[a, b]
                            y[b] = tt
                            qq += tt * tt
                        if qq > half_sq:
                            best = -1
                            for kk in range(shifts.shape[0]):
                                q2 = 0.0
                                for b in range(d):
                                    tt = y[b] + shifts[kk, b]
                                    q2 += tt * tt
                                if q2 < qq:
                                    qq = q2
                                    best = kk
                            if best >= 0:
                                for b in range(d):
                                    y[b] += shifts[best, b]
                        for b in range(d):
                            v[b] = y[b]
                    if qq > cut2:
                        continue
                    for a in range(d):
                        y[a] = mroot * v[a]
                else:
                    fi = jj if per_point else 0
                    for a in range(d):
                        s[a] = X[jj, a] - Q[q, a]
                        qq += s[a] * s[a]
                    if qq > cut2:
                        continue
                    for a in range(d):
                        tt = 0.0
                        for b in range(d):
                            tt += F[fi, a, b] * s[b]
                        y[a] = mroot * tt
                inside = True
                if w_ball:
                    r2 = 0.0
                    for a in range(d):
                        r2 += y[a] * y[a]
                    inside = r2 < w_r2
                else:
                    for a in range(d):
                        if y[a] < w_lo[a] or y[a] >= w_hi[a]:
                            inside = False
                            break
                if inside:
                    n_found += 1
        out[q] = n_found
    return out
