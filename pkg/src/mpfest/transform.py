"""Linear change of coordinates that maps a measured parallelotope of initial
states onto the unit hypercube.

With edge matrix ``E = [x_1 - x_0, ..., x_N - x_0]`` the map is ``z = H x``,
``H = E^-1``: every edge goes to a unit basis vector, so the parallelotope
becomes a hyperrectangle and symmetric initial-state sets stay symmetric.
"""

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import lsq_linear, nnls

from .errors import DegenerateGeometry, DimensionMismatch, InsufficientPairs, Singular
from .simgen import MeasurementSet

DEFAULT_COND_BOUND = 1e6


@dataclass(frozen=True)
class VertexSet:
    """Base vertex ``x_0``, edge vertices ``x_1..x_N`` and their mirror images.

    ``sources`` records ``(scenario_id, sample)`` per vertex, base first.
    """

    base: np.ndarray
    edges: np.ndarray  # N x N, row j is x_{j+1}
    base_mirror: np.ndarray
    edge_mirrors: np.ndarray
    sources: tuple = field(default=())

    @property
    def n(self):
        return self.base.shape[0]

    @property
    def E(self):
        """Edge matrix, column ``j`` is ``x_{j+1} - x_0``."""
        return (self.edges - self.base).T

    def vertices(self):
        return np.vstack([self.base, self.edges])

    def mirrors(self):
        return np.vstack([self.base_mirror, self.edge_mirrors])


@dataclass(frozen=True)
class Transformation:
    H: np.ndarray
    H_inv: np.ndarray
    condition_number: float
    quality: float = float("nan")

    @property
    def n(self):
        return self.H.shape[0]

    def to_dict(self):
        return {
            "H": self.H.tolist(),
            "H_inv": self.H_inv.tolist(),
            "condition_number": self.condition_number,
            "quality": self.quality,
        }

    @classmethod
    def from_dict(cls, doc):
        H = np.asarray(doc["H"], dtype=float)
        H_inv = np.asarray(doc["H_inv"], dtype=float) if "H_inv" in doc else np.linalg.inv(H)
        return cls(H, H_inv, float(doc.get("condition_number", np.linalg.cond(H))),
                   float(doc.get("quality", float("nan"))))

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def identity(cls, n):
        return cls(np.eye(n), np.eye(n), 1.0, 0.0)


def extremeness(D):
    """Relative distance of each row of ``D`` from the convex cone spanned by
    the other rows (non-negative least squares residual).

    Edges adjacent to ``x_0`` are extreme rays of the cone of vertex
    differences and score > 0; diagonals are non-negative combinations of
    edges and score ~0.
    """
    D = np.asarray(D, dtype=float)
    m = D.shape[0]
    out = np.zeros(m)
    for j in range(m):
        norm = np.linalg.norm(D[j])
        if norm == 0:
            continue
        others = np.delete(D, j, axis=0)
        if others.shape[0] == 0:
            out[j] = 1.0
            continue
        out[j] = _cone_distance(others.T, D[j]) / norm
    return out


def _cone_distance(A, b):
    """``min ||A x - b||`` over ``x >= 0``.

    Two solvers, residuals recomputed from their solutions: scipy 1.15's
    ``nnls`` can stop early and misreport its residual.
    """
    x1, _ = nnls(A, b)
    x2 = lsq_linear(A, b, bounds=(0.0, np.inf), method="bvls").x
    return min(np.linalg.norm(A @ x1 - b), np.linalg.norm(A @ np.maximum(x2, 0.0) - b))


def _cond(cols):
    s = np.linalg.svd(np.asarray(cols).T, compute_uv=False)
    return np.inf if s[-1] == 0 else s[0] / s[-1]


def assemble_vertex_set(pairs, cond_bound=DEFAULT_COND_BOUND, tol=1e-9):
    """Pick ``x_0`` and ``N`` edge vertices from the endpoints of ``pairs``.

    ``x_0`` is the first endpoint of the lowest-residual pair. Remaining
    endpoints are ranked by how far their difference vector lies outside the
    cone of the others (true parallelotope edges first, diagonals last) and
    added greedily while the growing edge matrix stays within ``cond_bound``;
    if that leaves the set short, the candidate maximizing the smallest
    singular value fills in.

    Raises
    ------
    InsufficientPairs
        Fewer than ``N + 1`` endpoints besides ``x_0`` and its mirror.
    DegenerateGeometry
        No selection reaches ``cond(E) <= cond_bound``.
    """
    n = pairs.n
    if len(pairs) == 0:
        raise InsufficientPairs("no symmetric pairs to build vertices from")
    best = min(range(len(pairs)), key=lambda i: (pairs.pairs[i].residual, i))
    anchor = pairs.pairs[best]
    x0 = anchor.a.state
    if n == 1:
        # a segment: the mirror of x_0 is the only other vertex
        if not abs(anchor.b.state[0] - x0[0]) > tol * max(abs(x0[0]), 1.0):
            raise DegenerateGeometry("the only pair has coincident endpoints")
        src = ((anchor.a.scenario_id, anchor.a.sample), (anchor.b.scenario_id, anchor.b.sample))
        return VertexSet(x0.copy(), anchor.b.state[None, :].copy(), anchor.b.state.copy(),
                         x0[None, :].copy(), src)
    # candidate endpoints: everything except the anchor pair
    cands, mirrors, srcs = [], [], []
    for i, p in enumerate(pairs.pairs):
        if i == best:
            continue
        for e, m in ((p.a, p.b), (p.b, p.a)):
            cands.append(e.state)
            mirrors.append(m.state)
            srcs.append((e.scenario_id, e.sample))
    if len(cands) < n:
        raise InsufficientPairs(f"{len(cands)} candidate vertices for {n} edges")
    C = np.asarray(cands)
    D = C - x0
    scale = np.linalg.norm(D, axis=1)
    usable = scale > tol * max(scale.max(), 1.0)
    # the mirror of x_0 is a diagonal, not an edge
    D_all = np.vstack([D, anchor.b.state - x0])
    score = extremeness(D_all)[:-1]
    order = sorted(np.nonzero(usable)[0], key=lambda j: (-round(score[j], 9), j))

    chosen = []
    for j in order:
        if len(chosen) == n:
            break
        trial = [D[k] / scale[k] for k in chosen] + [D[j] / scale[j]]
        if np.linalg.matrix_rank(np.asarray(trial), tol=1e-9) < len(trial):
            continue
        if _cond(D[chosen + [j]]) <= cond_bound:
            chosen.append(j)
    while len(chosen) < n:
        rest = [j for j in np.nonzero(usable)[0] if j not in chosen]
        if not rest:
            break
        smin = [np.linalg.svd((D[chosen + [j]] / scale[chosen + [j], None]).T,
                              compute_uv=False)[-1] for j in rest]
        k = int(np.argmax(smin))
        if smin[k] <= 1e-12:
            break
        chosen.append(rest[k])
    if len(chosen) < n:
        raise DegenerateGeometry(
            f"selected endpoints span only {len(chosen)} of {n} dimensions"
        )
    c = _cond(D[chosen])
    if not c <= cond_bound:
        raise DegenerateGeometry(f"edge matrix condition number {c:.3g} exceeds {cond_bound:.3g}")
    # keep edges in the order chosen; ties are resolved by endpoint order
    E_rows = C[chosen]
    M_rows = np.asarray(mirrors)[chosen]
    sources = ((anchor.a.scenario_id, anchor.a.sample),) + tuple(srcs[j] for j in chosen)
    return VertexSet(x0.copy(), E_rows.copy(), anchor.b.state.copy(), M_rows.copy(), sources)


def vertex_set_from_edges(x0, E, mirrors=None):
    """VertexSet with base ``x0`` and edge matrix ``E`` (columns are edges).

    Mirrors default to exact reflections through the origin.
    """
    x0 = np.asarray(x0, dtype=float)
    E = np.atleast_2d(np.asarray(E, dtype=float))
    if E.shape != (x0.shape[0], x0.shape[0]):
        raise DimensionMismatch(f"edge matrix {E.shape} for a {x0.shape[0]}-vector base")
    rows = x0 + E.T
    if mirrors is None:
        return VertexSet(x0, rows, -x0, -rows)
    mirrors = np.asarray(mirrors, dtype=float)
    return VertexSet(x0, rows, mirrors[0], mirrors[1:])


def build_transformation(vs, rcond=1e-13):
    """``H = E^-1``, ``H_inv = E``.

    Raises
    ------
    Singular
        ``E`` is numerically singular.
    """
    E = vs.E if isinstance(vs, VertexSet) else np.asarray(vs, dtype=float)
    s = np.linalg.svd(E, compute_uv=False)
    if s[0] == 0 or s[-1] / s[0] <= rcond:
        raise Singular("edge matrix is singular")
    H = np.linalg.inv(E)
    q = verify_hyperrectangle(H, vs) if isinstance(vs, VertexSet) else float("nan")
    return Transformation(H, E.copy(), float(s[0] / s[-1]), q)


def apply_transformation(tf, ms):
    """Map every sample of ``ms`` by ``z = H x``; times are untouched."""
    H = tf.H if isinstance(tf, Transformation) else np.asarray(tf, dtype=float)
    if not isinstance(ms, MeasurementSet):
        X = np.asarray(ms, dtype=float)
        if X.shape[-1] != H.shape[1]:
            raise DimensionMismatch(f"H is {H.shape}, states have {X.shape[-1]} entries")
        return X @ H.T
    if H.shape != (ms.n, ms.n):
        raise DimensionMismatch(f"H is {H.shape}, measurement set has {ms.n} states")
    return ms.map_states(H)


def verify_hyperrectangle(tf, vs):
    """Worst mirror residual of the vertex pairs in ``z``, relative to the
    mean vertex norm: ``max ||z_A + z_A'|| / mean ||z_A||``. Zero means the
    image is exactly symmetric about the origin."""
    H = tf.H if isinstance(tf, Transformation) else np.asarray(tf, dtype=float)
    Z = vs.vertices() @ H.T
    Zm = vs.mirrors() @ H.T
    scale = np.mean(np.linalg.norm(np.vstack([Z, Zm]), axis=1))
    if scale == 0:
        return float("inf")
    return float(np.max(np.linalg.norm(Z + Zm, axis=1)) / scale)
