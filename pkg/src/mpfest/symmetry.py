"""Selection of near-symmetric initial-state pairs from measured trajectories.

Every sampled state along a trajectory is a valid initial state of the
autonomous system, so candidates are drawn from all samples (subsampled by
``candidate_stride``). For a candidate ``x_A`` the peer is the indexed state
closest to ``-x_A``; a KD-tree answers those queries.
"""

import heapq
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import BelowThreshold, EmptyInput, InsufficientPairs, NoFeasiblePeer

MAX_AUTO_PAIRS = 512


class KDTree:
    """Static KD-tree over ``points`` (``n x d``) for exact nearest-neighbour
    queries.

    Splits are at the median of the widest coordinate; leaves hold at most
    ``leaf_size`` points. Node arrays are flat so the query loop can run
    under numba.
    """

    def __init__(self, points, leaf_size=kernels.LEAF_SIZE):
        P = np.ascontiguousarray(np.atleast_2d(np.asarray(points, dtype=float)))
        if P.shape[0] == 0:
            raise EmptyInput("cannot index an empty point set")
        self.n, self.d = P.shape
        self.leaf_size = int(leaf_size)
        perm = np.arange(self.n)
        start, stop, left, right, lo, hi = [], [], [], [], [], []

        def build(a, b):
            node = len(start)
            start.append(a)
            stop.append(b)
            left.append(-1)
            right.append(-1)
            block = P[perm[a:b]]
            lo.append(block.min(axis=0))
            hi.append(block.max(axis=0))
            if b - a <= self.leaf_size:
                return node
            dim = int(np.argmax(hi[node] - lo[node]))
            if hi[node][dim] == lo[node][dim]:
                return node  # all points identical
            mid = (a + b) // 2
            sub = perm[a:b]
            part = np.argpartition(P[sub, dim], mid - a, kind="introselect")
            perm[a:b] = sub[part]
            left[node] = build(a, mid)
            right[node] = build(mid, b)
            return node

        build(0, self.n)
        self.points = P
        self.perm = perm.astype(np.int64)
        self.data = np.ascontiguousarray(P[perm])
        self.start = np.array(start, np.int64)
        self.stop = np.array(stop, np.int64)
        self.left = np.array(left, np.int64)
        self.right = np.array(right, np.int64)
        self.box_lo = np.ascontiguousarray(lo)
        self.box_hi = np.ascontiguousarray(hi)

    def __len__(self):
        return self.n

    def ckdtree(self):
        """scipy tree over the same points, built on first use (numpy path)."""
        if getattr(self, "_ckd", None) is None:
            self._ckd = kernels.cKDTree(self.points, leafsize=self.leaf_size)
        return self._ckd

    def nearest(self, queries, allowed=None, exclude=None, rank=None):
        """Nearest allowed point to each query row.

        Returns ``(indices, distances)``; index -1 where no point is allowed.
        Equal distances resolve to the smaller ``rank`` (default: index).
        """
        Q = np.atleast_2d(np.asarray(queries, dtype=float))
        allowed = np.ones(self.n, bool) if allowed is None else np.asarray(allowed, bool)
        excl = np.full(Q.shape[0], -1, np.int64) if exclude is None else np.broadcast_to(
            np.asarray(exclude, np.int64), (Q.shape[0],))
        rank = np.arange(self.n) if rank is None else rank
        idx, d2 = kernels.kd_nearest_batch(self, Q, allowed, excl, rank)
        return idx, np.sqrt(d2)


def build_state_index(points, leaf_size=kernels.LEAF_SIZE):
    return KDTree(points, leaf_size)


@dataclass(frozen=True)
class SymmetryConfig:
    """Pair-selection settings.

    ``r_threshold`` and ``max_pair_residual`` of ``None`` resolve from the
    data: 0.1 and 0.5 times the RMS norm of the trajectories' initial
    states. ``weights`` of ``None`` with
    the weighted norm means inverse per-state RMS. ``candidate_stride`` of
    ``None`` keeps the candidate count near 20000.
    """

    r_threshold: float | None = None
    norm: str = "euclidean"
    weights: tuple | None = None
    max_pair_residual: float | None = None
    candidate_stride: int | None = None

    def __post_init__(self):
        if self.norm not in ("euclidean", "weighted"):
            raise ValueError(f"unknown norm {self.norm!r}")
        if self.r_threshold is not None and not self.r_threshold > 0:
            raise ValueError("r_threshold must be positive")
        if self.weights is not None and not np.all(np.asarray(self.weights) > 0):
            raise ValueError("weights must be strictly positive")
        if self.candidate_stride is not None and self.candidate_stride < 1:
            raise ValueError("candidate_stride must be >= 1")


@dataclass(frozen=True)
class Endpoint:
    state: np.ndarray
    scenario: int
    sample: int
    scenario_id: str = ""


@dataclass(frozen=True)
class SymmetricPair:
    a: Endpoint
    b: Endpoint
    residual: float


@dataclass(frozen=True)
class SymmetricPairSet:
    pairs: tuple
    n: int
    weights: np.ndarray
    r_threshold: float
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.pairs)

    def endpoints(self):
        """Both members of every pair, pair order, ``a`` before ``b``."""
        return [e for p in self.pairs for e in (p.a, p.b)]

    def norm(self, x):
        return float(np.linalg.norm(np.asarray(x) * self.weights))


def min_pairs(n):
    """Fewest pairs that can supply the ``n + 1`` vertices of a parallelotope.

    In 2-D the two diagonals suffice (base, both ends of the other pair);
    from 3-D on an adjacent vertex's mirror is never adjacent to the base.
    """
    if n <= 1:
        return 1
    if n == 2:
        return 2
    return n + 1


def auto_target(n):
    """All ``2^(n-1)`` vertex pairs of a parallelotope, capped."""
    return int(min(2 ** max(n - 1, 0), MAX_AUTO_PAIRS))


def _weights(ms_states, cfg, n):
    if cfg.norm == "euclidean":
        return np.ones(n)
    if cfg.weights is not None:
        w = np.asarray(cfg.weights, dtype=float)
        if w.shape != (n,):
            raise ValueError(f"{w.shape[0]} weights for {n} states")
        return w
    rms = np.sqrt(np.mean(ms_states ** 2, axis=0))
    return 1.0 / np.where(rms > 0, rms, 1.0)


def _candidates(ms, stride):
    states, scen, sample = [], [], []
    for s, tr in enumerate(ms):
        idx = np.arange(0, len(tr), stride)
        states.append(tr.states[idx])
        scen.append(np.full(idx.shape[0], s))
        sample.append(idx)
    return np.concatenate(states), np.concatenate(scen), np.concatenate(sample)


def resolve_config(ms, cfg):
    """Concrete ``(stride, weights, r_threshold, max_pair_residual)``."""
    total = sum(len(tr) for tr in ms)
    stride = cfg.candidate_stride or max(1, int(np.ceil(total / 20000)))
    X, _, _ = _candidates(ms, stride)
    w = _weights(X, cfg, ms.n)
    # initial states carry the disturbance scale; transient growth along
    # the trajectories would otherwise push the threshold above them
    X0 = np.array([tr.x0 for tr in ms])
    rms_norm = float(np.sqrt(np.mean(np.sum((X0 * w) ** 2, axis=1))))
    r = cfg.r_threshold if cfg.r_threshold is not None else 0.1 * rms_norm
    mpr = cfg.max_pair_residual if cfg.max_pair_residual is not None else 0.5 * rms_norm
    return stride, w, float(r), float(mpr)


def find_symmetric_peer(x_a, index, cfg=None, r_threshold=None, weights=None,
                        exclude=None, rank=None):
    """Indexed point minimizing ``||x_a + x'||`` among points with
    ``||x'|| > r_threshold``.

    ``index`` holds points already scaled by ``weights`` (the identity for
    the Euclidean norm). Returns ``(point_index, residual)``.
    """
    cfg = cfg or SymmetryConfig()
    w = np.ones(index.d) if weights is None else np.asarray(weights, dtype=float)
    r = r_threshold if r_threshold is not None else cfg.r_threshold
    if r is None:
        raise ValueError("r_threshold must be given")
    q = np.asarray(x_a, dtype=float) * w
    if not np.linalg.norm(q) > r:
        raise BelowThreshold(f"||x_A|| = {np.linalg.norm(q):.4g} <= r_threshold {r:.4g}")
    feasible = np.linalg.norm(index.points, axis=1) > r
    idx, dist = index.nearest(-q, feasible, -1 if exclude is None else exclude, rank)
    if idx[0] < 0:
        raise NoFeasiblePeer("no indexed point lies beyond r_threshold")
    return int(idx[0]), float(dist[0])


def select_pair_set(ms, cfg=None, target_pairs=None):
    """Best-first symmetric pairs from all candidate samples of ``ms``.

    Pairs are accepted in order of increasing residual ``||x_A + x_A'||``
    (ties: earlier sample index, then scenario order); a sample serves in at
    most one pair and both endpoints must exceed ``r_threshold``. With
    ``target_pairs=None`` up to ``2^(n-1)`` pairs are collected (a full
    parallelotope) and at least :func:`min_pairs` are required; an explicit
    target must be met exactly.

    Raises
    ------
    InsufficientPairs
        Too few pairs within ``max_pair_residual``.
    """
    cfg = cfg or SymmetryConfig()
    n = ms.n
    stride, w, r, mpr = resolve_config(ms, cfg)
    X, scen, sample = _candidates(ms, stride)
    P = X * w
    norms = np.linalg.norm(P, axis=1)
    feasible = norms > r
    required = min_pairs(n) if target_pairs is None else int(target_pairs)
    target = auto_target(n) if target_pairs is None else int(target_pairs)
    if int(feasible.sum()) < 2 * required:
        raise InsufficientPairs(
            f"only {int(feasible.sum())} samples exceed r_threshold {r:.4g}; "
            f"{required} pairs need {2 * required}"
        )
    # tie-break order: sample index, then scenario
    order = np.lexsort((scen, sample))
    rank = np.empty_like(order)
    rank[order] = np.arange(order.shape[0])

    tree = KDTree(P)
    available = feasible.copy()
    cand = np.nonzero(feasible)[0]
    heap = []

    def propose(ids):
        if len(ids) == 0:
            return
        peer, dist = tree.nearest(-P[ids], available, ids, rank)
        for a, b, d in zip(ids, peer, dist):
            if b >= 0:
                lo, hi = (a, b) if rank[a] < rank[b] else (b, a)
                heapq.heappush(heap, (float(d), int(rank[lo]), int(rank[hi]), int(a), int(b)))

    propose(cand)
    accepted = []
    while heap and len(accepted) < target:
        d, _, _, a, b = heapq.heappop(heap)
        if d > mpr:
            break
        if not available[a]:
            continue
        if not available[b]:
            propose(np.array([a]))
            continue
        available[a] = available[b] = False
        accepted.append((a, b, d))

    if len(accepted) < required:
        raise InsufficientPairs(
            f"{len(accepted)} symmetric pairs within residual {mpr:.4g}, need {required}"
        )
    ids = [tr.scenario_id for tr in ms]

    def endpoint(i):
        return Endpoint(X[i].copy(), int(scen[i]), int(sample[i]), ids[scen[i]])

    pairs = []
    for a, b, d in accepted:
        lo, hi = (a, b) if rank[a] < rank[b] else (b, a)
        pairs.append(SymmetricPair(endpoint(lo), endpoint(hi), d))
    meta = {"candidate_stride": stride, "max_pair_residual": mpr,
            "candidates": int(X.shape[0]), "feasible": int(feasible.sum())}
    return SymmetricPairSet(tuple(pairs), n, w, r, meta)


def pair_residual(pair, weights):
    return float(np.linalg.norm((pair.a.state + pair.b.state) * weights))
