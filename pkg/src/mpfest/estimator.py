"""Measurement-based participation factors.

Pipeline: symmetric pairs -> parallelotope -> ``z = H x`` -> Prony fits of
the ``z`` segments -> extended participation factors (EPFs) in ``z`` ->
back-transformation to ``x``.

For mode ``i`` with ``z``-space shape ``phi_z`` and EPFs ``p_z`` the
``x``-space participation factors are

    p_x = (H^-1 phi_z) * (H^T (p_z / phi_z))

elementwise; any scaling of ``phi_z`` cancels.
"""

import csv
import io
import json
from dataclasses import dataclass, field, replace

import numpy as np

from . import prony
from .errors import (
    ConfigError,
    DimensionMismatch,
    DisconnectedGroups,
    NoValidSegments,
    PartialObservability,
)
from .linmodel import TWO_PI
from .simgen import AmplitudeMatrix, MeasurementSet
from .symmetry import SymmetryConfig, auto_target, select_pair_set
from .transform import (
    DEFAULT_COND_BOUND,
    Transformation,
    assemble_vertex_set,
    build_transformation,
)

EXCLUSION_FLOOR = 1e-6
SHAPE_FLOOR = 1e-8
MAX_POLE_SEGMENTS = 16


@dataclass(frozen=True)
class EstimatorConfig:
    """Estimator settings.

    Parameters
    ----------
    symmetry : SymmetryConfig
        Pair selection.
    target_pairs : int or None
        ``None`` collects up to ``2^(N-1)`` pairs.
    cond_bound : float
        Largest admissible condition number of the edge matrix.
    order : int or None
        Prony order; ``None`` selects it from the data (at most ``N``).
    lag : int or None
        Linear-prediction lag; ``None`` picks it from the spectrum.
    modes : sequence of float or None
        Frequencies (Hz) to report; ``None`` reports every fitted mode with
        ``Im >= 0``.
    freq_tol : float
        Matching tolerance for ``modes`` in Hz.
    shared_poles : bool
        Solve every segment's amplitudes on the joint poles (default) rather
        than refitting each segment and matching.
    """

    symmetry: SymmetryConfig = field(default_factory=SymmetryConfig)
    target_pairs: int | None = None
    cond_bound: float = DEFAULT_COND_BOUND
    order: int | None = None
    lag: int | None = None
    modes: tuple | None = None
    freq_tol: float = 0.05
    shared_poles: bool = True
    exclusion_floor: float = EXCLUSION_FLOOR
    shape_floor: float = SHAPE_FLOOR
    max_pole_segments: int = MAX_POLE_SEGMENTS
    diagnostics: bool = True

    def __post_init__(self):
        if self.order is not None and self.order < 1:
            raise ConfigError("prony order must be >= 1")
        if self.lag is not None and self.lag < 1:
            raise ConfigError("prediction lag must be >= 1")
        if not self.cond_bound >= 1:
            raise ConfigError("cond_bound must be >= 1")
        if self.target_pairs is not None and self.target_pairs < 1:
            raise ConfigError("target_pairs must be >= 1")


@dataclass(frozen=True)
class EPFTable:
    """Averaged ratios ``B_ki / x_k0`` with per-entry sample count and spread.

    Entries with no valid segment are NaN with ``L == 0``.
    """

    values: np.ndarray
    L: np.ndarray
    dispersion: np.ndarray
    eigenvalues: np.ndarray
    space: str = "x"

    def entry(self, k, i):
        if self.L[k, i] == 0:
            raise NoValidSegments(f"no segment has a usable initial value for state {k}")
        return self.values[k, i]


@dataclass
class PFReport:
    """Measurement-based participation factors for the tracked modes.

    ``mpf[k, m]`` is the raw complex value for state ``k`` and tracked mode
    ``m``; ``normalized`` holds ``|mpf| / max_k |mpf|`` per column.
    ``L`` and ``dispersion`` describe the EPF average of coordinate ``k`` in
    the space where it was taken (``epf_space``).
    """

    eigenvalues: np.ndarray
    mpf: np.ndarray
    labels: tuple
    L: np.ndarray
    dispersion: np.ndarray
    flags: list
    method: str
    epf_space: str = "z"
    provenance: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    @property
    def frequencies(self):
        return np.abs(self.eigenvalues.imag) / TWO_PI

    @property
    def normalized(self):
        return normalize_columns(self.mpf)

    @property
    def n_modes(self):
        return self.eigenvalues.shape[0]

    def mode_index(self, hz, tol=0.05):
        d = np.abs(self.frequencies - hz)
        if d.size == 0:
            return None
        m = int(np.argmin(d))
        return m if d[m] <= tol else None

    def column(self, m):
        return self.normalized[:, m]

    def add_flag(self, k, m, flag):
        if flag not in self.flags[k][m]:
            self.flags[k][m].append(flag)

    def to_dict(self):
        return {
            "method": self.method,
            "labels": list(self.labels),
            "modes": [
                {"eigenvalue": [float(lam.real), float(lam.imag)], "hz": float(f)}
                for lam, f in zip(self.eigenvalues, self.frequencies)
            ],
            "mpf_normalized": _nan_to_none(self.normalized),
            "mpf_raw": {"re": _nan_to_none(self.mpf.real), "im": _nan_to_none(self.mpf.imag)},
            "L": self.L.tolist(),
            "dispersion": _nan_to_none(self.dispersion),
            "flags": self.flags,
            "epf_space": self.epf_space,
            "provenance": self.provenance,
            "diagnostics": self.diagnostics,
        }

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), indent=2, allow_nan=False, **kw)

    @classmethod
    def from_dict(cls, doc):
        lam = np.array([complex(*m["eigenvalue"]) for m in doc["modes"]])
        re = np.array(_none_to_nan(doc["mpf_raw"]["re"]), dtype=float).reshape(-1, lam.shape[0])
        im = np.array(_none_to_nan(doc["mpf_raw"]["im"]), dtype=float).reshape(-1, lam.shape[0])
        return cls(
            lam, re + 1j * im, tuple(doc["labels"]),
            np.array(doc["L"], dtype=int).reshape(re.shape),
            np.array(_none_to_nan(doc["dispersion"]), dtype=float).reshape(re.shape),
            [[list(f) for f in row] for row in doc["flags"]],
            doc.get("method", "full"), doc.get("epf_space", "z"),
            doc.get("provenance", {}), doc.get("diagnostics", {}),
        )

    def csv_rows(self):
        norm = self.normalized
        rows = []
        for m, hz in enumerate(self.frequencies):
            for k, lab in enumerate(self.labels):
                v = self.mpf[k, m]
                rows.append([
                    lab, f"{hz:.6f}", _fmt(norm[k, m]), _fmt(v.real), _fmt(v.imag),
                    str(int(self.L[k, m])), _fmt(self.dispersion[k, m]),
                    ";".join(self.flags[k][m]),
                ])
        return rows

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["state", "mode_hz", "mpf_normalized", "mpf_raw_re", "mpf_raw_im",
                    "L", "dispersion", "flags"])
        w.writerows(self.csv_rows())
        return buf.getvalue()

    def table(self, m):
        """``(label, normalized)`` for mode ``m``, largest first."""
        col = self.normalized[:, m]
        order = sorted(range(col.shape[0]),
                       key=lambda k: (-(col[k] if np.isfinite(col[k]) else -1), k))
        return [(self.labels[k], float(col[k])) for k in order]


def _fmt(x):
    return "" if not np.isfinite(x) else repr(float(x))


def _nan_to_none(a):
    a = np.asarray(a, dtype=float)
    return [[None if not np.isfinite(v) else float(v) for v in row] for row in a]


def _none_to_nan(rows):
    return [[np.nan if v is None else v for v in row] for row in rows]


def normalize_columns(P):
    """``|P| / max |P|`` per column ignoring NaN; the maximum is exactly 1."""
    mag = np.abs(np.asarray(P))
    out = np.full(mag.shape, np.nan)
    for m in range(mag.shape[1]):
        col = mag[:, m]
        ok = np.isfinite(col)
        if ok.any() and col[ok].max() > 0:
            out[:, m] = col / col[ok].max()
    return out


# -- EPF ------------------------------------------------------------------------


def compute_epf(B, initial_states=None, modes=None, floor=None, scale=None, space="x"):
    """Average of ``B_ki^(l) / x_k0^(l)`` over segments ``l``.

    Parameters
    ----------
    B : AmplitudeMatrix or array ``(L, N, r)``
    initial_states : array ``(L, N)``, optional
        Taken from ``B`` when it is an :class:`AmplitudeMatrix`.
    modes : sequence of int, optional
        Columns of ``B`` to keep (default all).
    floor : float, optional
        Segments with ``|x_k0| < floor * scale_k`` are left out of entry
        ``k``. Default ``1e-6``.
    scale : array ``(N,)``, optional
        Per-state scale; default the RMS of the initial states.
    """
    if isinstance(B, AmplitudeMatrix):
        lam = B.eigenvalues
        X0 = B.initial_states if initial_states is None else initial_states
        B = B.B
    else:
        lam = np.full(np.asarray(B).shape[2], np.nan + 0j)
        X0 = initial_states
    B = np.asarray(B, dtype=complex)
    X0 = np.atleast_2d(np.asarray(X0, dtype=float))
    if B.ndim != 3 or B.shape[:2] != X0.shape:
        raise DimensionMismatch(f"amplitudes {B.shape} do not match initial states {X0.shape}")
    if modes is not None:
        B = B[:, :, list(modes)]
        lam = lam[list(modes)]
    floor = EXCLUSION_FLOOR if floor is None else floor
    if scale is None:
        scale = np.sqrt(np.mean(X0 ** 2, axis=0))
    scale = np.where(np.asarray(scale) > 0, scale, 1.0)
    valid = np.abs(X0) >= floor * scale  # (L, N)
    safe = np.where(valid, X0, 1.0)
    R = B / safe[:, :, None]
    w = valid[:, :, None].astype(float)
    L = valid.sum(axis=0)
    Lr = np.repeat(L[:, None], B.shape[2], axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.where(Lr > 0, (R * w).sum(axis=0) / np.maximum(Lr, 1), np.nan)
        dev = np.abs(R - mean[None]) ** 2 * w
        disp = np.where(Lr > 0, np.sqrt(dev.sum(axis=0) / np.maximum(Lr, 1)), np.nan)
    return EPFTable(mean, Lr, disp, np.asarray(lam), space)


def epf_equals_pf_residual(dec, initial_states, k, i, floor=EXCLUSION_FLOOR):
    """Exact gap between the EPF from exact amplitudes and the model PF:
    ``(1/L) sum_l sum_{j != k} psi_ij phi_ki x_j0 / x_k0``."""
    X0 = np.atleast_2d(np.asarray(initial_states, dtype=float))
    scale = np.sqrt(np.mean(X0 ** 2, axis=0))
    scale = np.where(scale > 0, scale, 1.0)
    valid = np.abs(X0[:, k]) >= floor * scale[k]
    if not valid.any():
        raise NoValidSegments(f"no segment has a usable initial value for state {k}")
    X = X0[valid]
    psi = dec.left[i].copy()
    psi[k] = 0.0
    return complex(np.mean((X @ psi) / X[:, k]) * dec.right[k, i])


# -- Prony over segments --------------------------------------------------------


@dataclass(frozen=True)
class Segment:
    signals: np.ndarray  # T x N, starting at the endpoint sample
    source: tuple  # (scenario_id, sample)

    @property
    def x0(self):
        return self.signals[0]


def endpoint_segments(ms, endpoints):
    """Samples from each endpoint to the end of its trajectory."""
    out = []
    for e in endpoints:
        tr = ms.trajectories[e.scenario]
        out.append(Segment(tr.states[e.sample:], (e.scenario_id, e.sample)))
    return out


def initial_segments(ms):
    return [Segment(tr.states, (tr.scenario_id, 0)) for tr in ms]


def _pole_segments(segments, cap):
    return [s.signals for s in segments[:cap]]


def resolve_order(signals, dt, cfg, n, lag):
    if cfg.order is not None:
        return int(cfg.order)
    return prony.select_order(signals, dt, n, lag=lag)


def fit_reference_poles(segments, dt, n, cfg):
    """Joint poles of the first ``cfg.max_pole_segments`` segments.

    Returns ``(eigenvalues, order, lag)``.
    """
    sig = _pole_segments(segments, cfg.max_pole_segments)
    lag = cfg.lag or prony.auto_lag(sig, dt)
    order = resolve_order(sig, dt, cfg, n, lag)
    lam = prony.fit_poles(sig, dt, order, lag=lag)
    return lam, order, lag


def segment_amplitudes(segments, dt, lam, cfg, lag=1):
    """``B[l, k, r]`` for every segment on the poles ``lam``.

    With ``shared_poles`` the amplitudes are least squares on ``lam``;
    otherwise each segment gets its own Prony fit whose poles are matched to
    ``lam`` (unmatched entries become NaN). Returns ``(B, residual_rms)``.
    """
    B = np.full((len(segments), segments[0].signals.shape[1], lam.shape[0]), np.nan + 0j)
    res = np.zeros(len(segments))
    for l, seg in enumerate(segments):
        if cfg.shared_poles:
            C, res[l] = prony.fit_amplitudes(seg.signals, dt, lam)
            B[l] = C
            continue
        fit = prony.fit_prony(seg.signals, dt, lam.shape[0], lag=lag)
        mapping = prony.match_modes(fit, lam, required=())
        for a, b in mapping.items():
            B[l, :, b] = fit.amplitudes[:, a]
        res[l] = fit.residual_rms
    return B, res


def estimate_shapes(B, modes=None):
    """Mode shapes as the dominant left singular vector of each mode's
    amplitude columns across segments; largest entry real positive."""
    B = np.asarray(B)
    modes = range(B.shape[2]) if modes is None else modes
    out = []
    for i in modes:
        cols = B[:, :, i]
        cols = cols[np.all(np.isfinite(cols), axis=1)]
        if cols.shape[0] == 0:
            out.append(np.full(B.shape[1], np.nan + 0j))
            continue
        U, _, _ = np.linalg.svd(cols.T, full_matrices=False)
        v = U[:, 0]
        k = int(np.argmax(np.abs(v)))
        v = v * (abs(v[k]) / v[k])
        v[k] = abs(v[k])
        out.append(v)
    return np.array(out).T


def back_transform(p_z, phi_z, H, floor=SHAPE_FLOOR):
    """Participation factors in ``x`` for one mode from its ``z``-space EPFs
    and shape.

    Terms whose shape entry is below ``floor`` times the shape norm are left
    out of the sum. Returns ``(p_x, excluded_indices)``.
    """
    H = np.asarray(H, dtype=float)
    phi = np.asarray(phi_z, dtype=complex)
    p = np.asarray(p_z, dtype=complex)
    keep = (np.abs(phi) >= floor * np.linalg.norm(phi)) & np.isfinite(p)
    ratio = np.where(keep, p / np.where(keep, phi, 1.0), 0.0)
    phi_x = np.linalg.solve(H, phi)
    psi_x = H.T @ ratio
    return phi_x * psi_x, np.nonzero(~keep)[0].tolist()


# -- pipeline -------------------------------------------------------------------


def _select_modes(lam, cfg, modes=None):
    """Indices of ``lam`` to report."""
    want = cfg.modes if modes is None else modes
    reps = [i for i in range(lam.shape[0]) if lam[i].imag >= 0]
    if want is None:
        return reps
    freqs = np.abs(lam.imag) / TWO_PI
    out = []
    for hz in want:
        d = [abs(freqs[i] - hz) for i in reps]
        if not d or min(d) > cfg.freq_tol:
            raise PartialObservability(f"no identified mode within {cfg.freq_tol} Hz of {hz} Hz")
        out.append(reps[int(np.argmin(d))])
    return out


def _geometry(ms, cfg, target_pairs=None):
    pairs = select_pair_set(ms, cfg.symmetry, target_pairs if target_pairs is not None
                            else cfg.target_pairs)
    vs = assemble_vertex_set(pairs, cfg.cond_bound)
    tf = build_transformation(vs)
    return pairs, vs, tf


def _provenance(pairs, vs, tf, order, lag, res):
    return {
        "pairs": [
            {"a": [p.a.scenario_id, p.a.sample], "b": [p.b.scenario_id, p.b.sample],
             "residual": p.residual}
            for p in pairs.pairs
        ],
        "vertices": [list(s) for s in vs.sources],
        "transformation": tf.to_dict(),
        "prony": {"order": int(order), "lag": int(lag),
                  "max_segment_residual": float(np.max(res)) if len(res) else 0.0},
        "pair_meta": pairs.meta,
    }


def _finish(ms, lam, P, epf, sel, flags, method, space, prov, cfg):
    report = PFReport(
        lam[sel], P, ms.labels, epf.L[:, sel] if epf is not None else np.ones(P.shape, int),
        epf.dispersion[:, sel] if epf is not None else np.zeros(P.shape),
        flags, method, space, prov,
    )
    if cfg.diagnostics:
        from .diagnostics import attach_diagnostics
        attach_diagnostics(report, ms)
    return report


def _empty_flags(n, m):
    return [[[] for _ in range(m)] for _ in range(n)]


def _z_stage(ms, cfg, pairs, tf, lam=None):
    """Segments in ``z``, poles, amplitudes and EPFs."""
    zs = ms.map_states(tf.H)
    segs = endpoint_segments(zs, pairs.endpoints())
    if lam is None:
        lam, order, lag = fit_reference_poles(segs, ms.dt, ms.n, cfg)
    else:
        order = lam.shape[0]
        lag = cfg.lag or prony.auto_lag(_pole_segments(segs, cfg.max_pole_segments), ms.dt)
    B, res = segment_amplitudes(segs, ms.dt, lam, cfg, lag)
    X0 = np.array([s.x0 for s in segs])
    scale = np.sqrt(np.mean(np.concatenate([tr.states for tr in zs]) ** 2, axis=0))
    epf = compute_epf(B, X0, floor=cfg.exclusion_floor, scale=scale, space="z")
    epf = replace(epf, eigenvalues=lam)
    return segs, lam, order, lag, B, res, epf


def _mpf_columns(epf, shapes, H, sel, cfg, n):
    P = np.full((n, len(sel)), np.nan + 0j)
    flags = _empty_flags(n, len(sel))
    for m, i in enumerate(sel):
        P[:, m], excl = back_transform(epf.values[:, i], shapes[:, m], H, cfg.shape_floor)
        # a dropped z term touches every x entry of the column
        if np.any(epf.L[:, i] == 0):
            for row in flags:
                _add(row[m], "missing_epf")
        if excl:
            for row in flags:
                _add(row[m], "shape_floor")
    return P, flags


def _add(lst, flag):
    if flag not in lst:
        lst.append(flag)


def estimate_mpf_full(ms, cfg=None):
    """Four-step estimate with all ``N`` modes identified.

    Raises
    ------
    InsufficientPairs, DegenerateGeometry, IllConditioned
        From the geometry and fitting steps.
    PartialObservability
        Fewer than ``N`` modes identifiable; use :func:`estimate_mpf_partial`.
    """
    cfg = cfg or EstimatorConfig()
    pairs, vs, tf = _geometry(ms, cfg)
    segs, lam, order, lag, B, res, epf = _z_stage(ms, cfg, pairs, tf)
    if lam.shape[0] < ms.n:
        raise PartialObservability(
            f"{lam.shape[0]} of {ms.n} modes identified; use the partial estimator"
        )
    sel = _select_modes(lam, cfg)
    shapes = estimate_shapes(B, sel)
    P, flags = _mpf_columns(epf, shapes, tf.H, sel, cfg, ms.n)
    prov = _provenance(pairs, vs, tf, order, lag, res)
    prov["shapes_z"] = {"re": shapes.real.tolist(), "im": shapes.imag.tolist()}
    return _finish(ms, lam, P, epf, sel, flags, "full", "z", prov, cfg)


def estimate_mpf_partial(ms, known_shapes=None, H=None, cfg=None, modes=None):
    """Estimate restricted to tracked modes.

    Parameters
    ----------
    known_shapes : array ``(N, m)``, optional
        ``z``-space shapes of the tracked modes, in the order they are
        reported. Estimated from the segment amplitudes when omitted.
    H : Transformation or array, optional
        Coordinate map; built from the data when omitted. The segments are
        then the trajectories' initial states if no symmetric pairs are
        computed.
    modes : sequence of float, optional
        Tracked mode frequencies in Hz (overrides ``cfg.modes``).
    """
    cfg = cfg or EstimatorConfig()
    pairs, vs, tf = _geometry(ms, cfg)
    if H is not None:
        tf = H if isinstance(H, Transformation) else Transformation(
            np.asarray(H, float), np.linalg.inv(H), float(np.linalg.cond(H)))
    segs, lam, order, lag, B, res, epf = _z_stage(ms, cfg, pairs, tf)
    sel = _select_modes(lam, cfg, modes)
    if known_shapes is None:
        shapes = estimate_shapes(B, sel)
    else:
        shapes = np.asarray(known_shapes, dtype=complex).reshape(ms.n, -1)
        if shapes.shape[1] != len(sel):
            raise DimensionMismatch(f"{shapes.shape[1]} shapes for {len(sel)} tracked modes")
    P, flags = _mpf_columns(epf, shapes, tf.H, sel, cfg, ms.n)
    prov = _provenance(pairs, vs, tf, order, lag, res)
    prov["tracked"] = [int(i) for i in sel]
    prov["shapes_z"] = {"re": shapes.real.tolist(), "im": shapes.imag.tolist()}
    prov["shapes_source"] = "estimated" if known_shapes is None else "given"
    return _finish(ms, lam, P, epf, sel, flags, "partial", "z", prov, cfg)


def estimate_mpf_blackbox(ms, cfg=None):
    """EPFs straight from the trajectories (``H = I``); the caller certifies
    that the initial states are symmetric under single-coordinate flips."""
    cfg = cfg or EstimatorConfig()
    segs = initial_segments(ms)
    lam, order, lag = fit_reference_poles(segs, ms.dt, ms.n, cfg)
    B, res = segment_amplitudes(segs, ms.dt, lam, cfg, lag)
    X0 = np.array([s.x0 for s in segs])
    scale = np.sqrt(np.mean(np.concatenate([tr.states for tr in ms]) ** 2, axis=0))
    epf = replace(compute_epf(B, X0, floor=cfg.exclusion_floor, scale=scale), eigenvalues=lam)
    sel = _select_modes(lam, cfg)
    P = epf.values[:, sel].copy()
    flags = _empty_flags(ms.n, len(sel))
    for m, i in enumerate(sel):
        for k in np.nonzero(epf.L[:, i] == 0)[0]:
            _add(flags[k][m], "missing_epf")
    prov = {"segments": [list(s.source) for s in segs],
            "prony": {"order": int(order), "lag": int(lag),
                      "max_segment_residual": float(np.max(res))}}
    return _finish(ms, lam, P, epf, sel, flags, "blackbox", "x", prov, cfg)


def _group_scales(groups, values, mode):
    """Complex factors aligning each group's column through shared states.

    Returns ``(scales, component_ids)``; groups in a component with no path
    to another keep their absolute scale.
    """
    g = len(groups)
    scales = np.ones(g, complex)
    comp = -np.ones(g, int)
    c = 0
    for root in range(g):
        if comp[root] >= 0:
            continue
        comp[root] = c
        stack = [root]
        while stack:
            a = stack.pop()
            for b in range(g):
                if comp[b] >= 0:
                    continue
                shared = [s for s in groups[a] if s in groups[b]]
                ratios = []
                for s in shared:
                    va = values[a][groups[a].index(s), mode]
                    vb = values[b][groups[b].index(s), mode]
                    if np.isfinite(va) and np.isfinite(vb) and abs(vb) > 0:
                        ratios.append(scales[a] * va / vb)
                if ratios:
                    scales[b] = np.mean(ratios)
                    comp[b] = c
                    stack.append(b)
        c += 1
    return scales, comp


def estimate_mpf_subspace(ms, groups, cfg=None, stitch="auto", target_pairs=None):
    """Run the pipeline on coordinate groups and stitch the pieces.

    Each group is projected out of ``ms`` and processed on its own (own
    pairs, own ``H``); all groups share the poles of one joint fit over the
    full trajectories. Per mode, group columns are aligned by complex
    factors through states that appear in several groups (``stitch`` of
    ``"auto"`` or ``"shared_states"``); unlinked groups keep their absolute
    values (``"auto"`` or ``"absolute"``). Overlapping states are averaged.

    ``target_pairs`` defaults to ``2^(g-1)`` for a group of ``g`` states:
    the vertex pairs of one ``g``-parallelotope in the projected data.

    Raises
    ------
    DisconnectedGroups
        ``stitch="shared_states"`` and some group shares no state with the
        rest.
    """
    cfg = cfg or EstimatorConfig()
    if stitch not in ("auto", "shared_states", "absolute"):
        raise ConfigError(f"unknown stitch mode {stitch!r}")
    idx_groups = []
    for g in groups:
        idx = [ms.labels.index(c) if isinstance(c, str) else int(c) for c in g]
        if len(idx) < 2:
            raise ConfigError("every group needs at least two states")
        idx_groups.append(idx)
    lam, order, lag = fit_reference_poles(initial_segments(ms), ms.dt, ms.n, cfg)
    sel = _select_modes(lam, cfg)
    tp = target_pairs if target_pairs is not None else cfg.target_pairs
    values, flags_g, provs = [], [], []
    Ls, disps = [], []
    for idx in idx_groups:
        sub = ms.select(idx)
        pairs, vs, tf = _geometry(sub, cfg, tp if tp is not None else auto_target(len(idx)))
        _, _, _, _, B, res, epf = _z_stage(sub, cfg, pairs, tf, lam=lam)
        shapes = estimate_shapes(B, sel)
        P, fl = _mpf_columns(epf, shapes, tf.H, sel, cfg, len(idx))
        values.append(P)
        flags_g.append(fl)
        Ls.append(epf.L[:, sel])
        disps.append(epf.dispersion[:, sel])
        provs.append(_provenance(pairs, vs, tf, order, lag, res))

    n, m = ms.n, len(sel)
    out = np.full((n, m), np.nan + 0j)
    L = np.zeros((n, m), int)
    disp = np.full((n, m), np.nan)
    flags = _empty_flags(n, m)
    comps = []
    for mi in range(m):
        if stitch == "absolute":
            scales, comp = np.ones(len(idx_groups), complex), np.arange(len(idx_groups))
        else:
            scales, comp = _group_scales(idx_groups, values, mi)
            if stitch == "shared_states" and len(set(comp.tolist())) > 1:
                raise DisconnectedGroups("groups share no states with each other")
        comps.append(comp.tolist())
        acc = np.zeros(n, complex)
        cnt = np.zeros(n, int)
        for gi, idx in enumerate(idx_groups):
            for r, s in enumerate(idx):
                v = values[gi][r, mi] * scales[gi]
                if np.isfinite(v):
                    acc[s] += v
                    cnt[s] += 1
                    L[s, mi] = max(L[s, mi], Ls[gi][r, mi])
                    disp[s, mi] = disps[gi][r, mi] * abs(scales[gi])
                for f in flags_g[gi][r][mi]:
                    _add(flags[s][mi], f)
        ok = cnt > 0
        out[ok, mi] = acc[ok] / cnt[ok]
        if len(set(comp.tolist())) > 1:
            for s in range(n):
                _add(flags[s][mi], "unstitched_groups")
    for s in range(n):
        if not any(s in g for g in idx_groups):
            for mi in range(m):
                _add(flags[s][mi], "not_covered")
    prov = {"groups": idx_groups, "stitch": stitch, "components": comps,
            "prony": {"order": int(order), "lag": int(lag)}, "group_runs": provs}
    report = PFReport(lam[sel], out, ms.labels, L, disp, flags, "subspace", "z", prov)
    if cfg.diagnostics:
        from .diagnostics import attach_diagnostics
        attach_diagnostics(report, ms)
    return report


def estimate(ms, cfg=None, method="full", **kw):
    """Dispatch on ``method``: full | partial | subspace | blackbox."""
    if method == "full":
        return estimate_mpf_full(ms, cfg)
    if method == "partial":
        return estimate_mpf_partial(ms, cfg=cfg, **kw)
    if method == "subspace":
        return estimate_mpf_subspace(ms, cfg=cfg, **kw)
    if method == "blackbox":
        return estimate_mpf_blackbox(ms, cfg)
    raise ConfigError(f"unknown estimator mode {method!r}")


__all__ = [
    "EstimatorConfig",
    "EPFTable",
    "PFReport",
    "MeasurementSet",
    "compute_epf",
    "epf_equals_pf_residual",
    "estimate",
    "estimate_mpf_blackbox",
    "estimate_mpf_full",
    "estimate_mpf_partial",
    "estimate_mpf_subspace",
    "back_transform",
    "estimate_shapes",
    "normalize_columns",
]
