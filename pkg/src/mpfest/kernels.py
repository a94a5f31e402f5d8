"""Hot numeric kernels.

The recurrence and the KD-tree query have a numba build and a plain numpy
path; which one runs is decided by :mod:`mpfest._accel` at import time.
The ``*_numpy`` variants are always importable so the two can be compared
directly (see ``benchmarks/bench_kernels.py``).
"""

import numpy as np
from scipy.spatial import cKDTree

from ._accel import HAVE_NUMBA, njit

__all__ = [
    "HAVE_NUMBA",
    "propagate",
    "propagate_numpy",
    "max_coherence",
    "max_coherence_numpy",
    "kd_nearest_batch",
    "nearest_numpy",
    "nearest_ckdtree",
    "LEAF_SIZE",
]

LEAF_SIZE = 16


# --------------------------------------------------------------------------
# linear recurrence x[n+1] = M x[n]


@njit(cache=True)
def _propagate_jit(M, x0, steps, blowup):
    n = x0.shape[0]
    out = np.empty((steps, n))
    for j in range(n):
        out[0, j] = x0[j]
    for s in range(1, steps):
        for i in range(n):
            acc = 0.0
            for j in range(n):
                acc += M[i, j] * out[s - 1, j]
            if not (abs(acc) <= blowup):
                return out[:s], s
            out[s, i] = acc
    return out, steps


def propagate_numpy(M, x0, steps, blowup=1e12):
    """Iterate ``x[n+1] = M @ x[n]``; stop early once any ``|x| > blowup``.

    Returns the computed rows and the number of valid rows.
    """
    M = np.asarray(M, dtype=float)
    out = np.empty((steps, M.shape[0]))
    out[0] = x0
    for s in range(1, steps):
        nxt = M @ out[s - 1]
        if not np.all(np.abs(nxt) <= blowup):
            return out[:s], s
        out[s] = nxt
    return out, steps


def propagate(M, x0, steps, blowup=1e12):
    M = np.ascontiguousarray(M, dtype=float)
    x0 = np.ascontiguousarray(x0, dtype=float)
    if HAVE_NUMBA:
        return _propagate_jit(M, x0, int(steps), float(blowup))
    return propagate_numpy(M, x0, int(steps), blowup)


# --------------------------------------------------------------------------
# mutual coherence of the columns of a sampling matrix


def max_coherence_numpy(S):
    """Largest normalized inner product between distinct columns.

    Returns ``(gamma, i, j)`` with ``i < j``; ties resolve to the first pair
    in row-major order.
    """
    S = np.asarray(S, dtype=float)
    norms = np.sqrt(np.einsum("ij,ij->j", S, S))
    G = np.abs(S.T @ S) / np.outer(norms, norms)
    iu = np.triu_indices(S.shape[1], k=1)
    vals = G[iu]
    k = int(np.argmax(vals))
    return float(vals[k]), int(iu[0][k]), int(iu[1][k])


def max_coherence(S):
    # a BLAS Gram product beats a compiled double loop here; see
    # benchmarks/bench_kernels.py
    return max_coherence_numpy(S)


# --------------------------------------------------------------------------
# KD-tree nearest neighbour query (tree arrays are built in symmetry.py)


@njit(cache=True)
def _box_dist2(q, lo, hi):
    d = 0.0
    for k in range(q.shape[0]):
        if q[k] < lo[k]:
            t = lo[k] - q[k]
            d += t * t
        elif q[k] > hi[k]:
            t = q[k] - hi[k]
            d += t * t
    return d


@njit(cache=True)
def _kd_nearest_one(data, perm, start, stop, left, right, box_lo, box_hi,
                    q, allowed, exclude, rank):
    best = -1
    best_d = np.inf
    best_r = np.iinfo(np.int64).max
    stack = np.empty(512, np.int64)
    stack[0] = 0
    sp = 1
    dim = q.shape[0]
    while sp > 0:
        sp -= 1
        node = stack[sp]
        lb = _box_dist2(q, box_lo[node], box_hi[node])
        if lb > best_d:
            continue
        if left[node] < 0:
            for p in range(start[node], stop[node]):
                idx = perm[p]
                if idx == exclude or not allowed[idx]:
                    continue
                d = 0.0
                for k in range(dim):
                    t = data[p, k] - q[k]
                    d += t * t
                if d < best_d or (d == best_d and rank[idx] < best_r):
                    best = idx
                    best_d = d
                    best_r = rank[idx]
            continue
        l = left[node]
        r = right[node]
        dl = _box_dist2(q, box_lo[l], box_hi[l])
        dr = _box_dist2(q, box_lo[r], box_hi[r])
        # push the farther child first so the nearer one is searched first
        if dl <= dr:
            stack[sp] = r
            stack[sp + 1] = l
        else:
            stack[sp] = l
            stack[sp + 1] = r
        sp += 2
    return best, best_d


@njit(cache=True)
def _kd_nearest_batch_jit(data, perm, start, stop, left, right, box_lo, box_hi,
                          Q, allowed, excludes, rank):
    m = Q.shape[0]
    out_i = np.empty(m, np.int64)
    out_d = np.empty(m)
    for j in range(m):
        i, d = _kd_nearest_one(data, perm, start, stop, left, right, box_lo,
                               box_hi, Q[j], allowed, excludes[j], rank)
        out_i[j] = i
        out_d[j] = d
    return out_i, out_d


def nearest_numpy(points, Q, allowed, excludes, rank, chunk=512):
    """Brute-force counterpart of :func:`kd_nearest_batch` (same contract).

    Distances come from a BLAS product; candidates within rounding of the
    minimum are re-measured directly so ties resolve exactly as in the tree
    search.
    """
    points = np.asarray(points, dtype=float)
    m = Q.shape[0]
    out_i = np.full(m, -1, np.int64)
    out_d = np.full(m, np.inf)
    cand = np.nonzero(allowed)[0]
    if cand.size == 0:
        return out_i, out_d
    P = points[cand]
    r = rank[cand]
    pp = np.einsum("ij,ij->i", P, P)
    for s in range(0, m, chunk):
        q = Q[s:s + chunk]
        qq = np.einsum("ij,ij->i", q, q)
        d = qq[:, None] - 2.0 * (q @ P.T) + pp[None, :]
        d[cand[None, :] == excludes[s:s + chunk, None]] = np.inf
        slack = 1e-9 * (qq[:, None] + pp[None, :]) + 1e-300
        dmin = d.min(axis=1)
        for row in range(q.shape[0]):
            if not np.isfinite(dmin[row]):
                continue
            near = np.nonzero(d[row] <= dmin[row] + slack[row])[0]
            exact = np.sum((P[near] - q[row]) ** 2, axis=1)
            best = np.lexsort((r[near], exact))[0]
            out_i[s + row] = cand[near[best]]
            out_d[s + row] = exact[best]
    return out_i, out_d


def nearest_ckdtree(ckd, points, Q, allowed, excludes, rank, k0=8):
    """Same contract as :func:`kd_nearest_batch` on a scipy ``cKDTree``.

    The ``k`` nearest neighbours are re-measured and re-ranked exactly. A
    query is retried with a larger ``k`` while its best admissible point is
    not strictly closer than the ``k``-th neighbour (masked points or ties
    could hide a better-ranked one); at ``k = n`` the answer is exact.
    """
    points = np.asarray(points, dtype=float)
    n = points.shape[0]
    m = Q.shape[0]
    out_i = np.full(m, -1, np.int64)
    out_d = np.full(m, np.inf)
    pending = np.arange(m)
    k = k0
    while pending.size:
        kk = min(k, n)
        _, nb = ckd.query(Q[pending], k=kk)
        nb = np.asarray(nb).reshape(pending.shape[0], kk)
        retry = []
        for row, j in enumerate(pending):
            idx = nb[row]
            d = np.sum((points[idx] - Q[j]) ** 2, axis=1)
            ok = allowed[idx] & (idx != excludes[j])
            if kk < n:
                bound = d.max() * (1.0 - 1e-9)
                if not ok.any() or d[ok].min() >= bound:
                    retry.append(j)
                    continue
            elif not ok.any():
                continue
            cand = idx[ok]
            best = np.lexsort((rank[cand], d[ok]))[0]
            out_i[j] = cand[best]
            out_d[j] = d[ok][best]
        pending = np.asarray(retry, dtype=np.int64)
        k *= 4
    return out_i, out_d


def kd_nearest_batch(tree, Q, allowed, excludes, rank):
    """Nearest allowed point for every row of ``Q``.

    ``excludes[j]`` is an original point index that query ``j`` may not
    return (-1 for none). Equal distances resolve to the smaller ``rank``.
    Returns ``(indices, squared_distances)``; index -1 when nothing is
    allowed.
    """
    Q = np.ascontiguousarray(np.atleast_2d(Q), dtype=float)
    allowed = np.ascontiguousarray(allowed, dtype=np.bool_)
    excludes = np.ascontiguousarray(excludes, dtype=np.int64)
    rank = np.ascontiguousarray(rank, dtype=np.int64)
    if not HAVE_NUMBA:
        return nearest_ckdtree(tree.ckdtree(), tree.points, Q, allowed, excludes, rank)
    return _kd_nearest_batch_jit(
        tree.data, tree.perm, tree.start, tree.stop, tree.left, tree.right,
        tree.box_lo, tree.box_hi, Q, allowed, excludes, rank,
    )
