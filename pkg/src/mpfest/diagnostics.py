"""Error indices and conditioning checks.

The sampling matrix ``S`` of a trajectory has one row per time sample and
one column per state signal. Two nearly parallel columns make the modal
estimation system ``S Psi = B`` ill conditioned: with coherence ``gamma``
between columns ``s_i`` and ``s_j``,

    cond(S) >= ||S||_2 / ||s_i - sign(s_i . s_j) s_j||

where the denominator equals
``sqrt(||s_i||^2 + ||s_j||^2 - 2 ||s_i|| ||s_j|| gamma)``.
"""

from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels
from .errors import NoValidSegments, ZeroColumn, ZeroDenominator
from .linmodel import ModalDecomposition, PFMatrix, participation_matrix

GAMMA_WARN = 0.95
COND_WARN = 1e3
LOW_CONFIDENCE_PF = 0.05


@dataclass(frozen=True)
class ConditioningReport:
    gamma: float
    pair: tuple
    condition_lower_bound: float
    condition_estimate: float
    warning: bool
    source: str = ""

    def to_dict(self):
        d = asdict(self)
        d["pair"] = list(self.pair)
        for k in ("condition_lower_bound", "condition_estimate"):
            if not np.isfinite(d[k]):
                d[k] = "inf"
        return d


@dataclass
class ErrorReport:
    """``e1[k, m]`` (complex, model-based EPF bias) and ``e2[m][i, j]``
    (percent ratio error between states ``i`` and ``j``)."""

    e1: np.ndarray | None
    e2: np.ndarray
    modes_hz: list
    model_modes: list
    labels: tuple
    meta: dict = field(default_factory=dict)

    @property
    def max_abs_e2(self):
        v = np.abs(self.e2[np.isfinite(self.e2)])
        return float(v.max()) if v.size else 0.0

    def to_dict(self):
        def clean(a):
            return [[None if not np.isfinite(x) else float(x) for x in row] for row in a]

        out = {
            "labels": list(self.labels),
            "modes_hz": [float(f) for f in self.modes_hz],
            "model_modes": self.model_modes,
            "e2_percent": [clean(m) for m in self.e2],
            "max_abs_e2": self.max_abs_e2,
            "meta": self.meta,
        }
        if self.e1 is not None:
            out["e1"] = {"re": clean(self.e1.real), "im": clean(self.e1.imag)}
        return out


# -- error indices ---------------------------------------------------------------


def error_e1(dec, initial_states, k, i):
    """``(1/L) sum_l sum_{j != k} psi_ij phi_ki x_j0 / x_k0``: the gap
    between the EPF from exact amplitudes and the model PF."""
    from .estimator import epf_equals_pf_residual

    return epf_equals_pf_residual(dec, initial_states, k, i)


def error_e1_matrix(dec, initial_states, modes=None):
    modes = range(dec.n) if modes is None else modes
    out = np.full((dec.n, len(modes)), np.nan + 0j)
    for m, i in enumerate(modes):
        for k in range(dec.n):
            try:
                out[k, m] = error_e1(dec, initial_states, k, i)
            except NoValidSegments:
                pass
    return out


def error_e2(pf, mpf, i, j, mode=None):
    """``((PF_j / PF_i) / (MPF_j / MPF_i) - 1) * 100`` on magnitudes.

    ``pf`` and ``mpf`` are PF columns (vectors) or matrices with ``mode``
    selecting the column.

    Raises
    ------
    ZeroDenominator
        Any of the four magnitudes is zero.
    """
    a = _column(pf, mode)
    b = _column(mpf, mode)
    vals = (abs(a[i]), abs(a[j]), abs(b[i]), abs(b[j]))
    if not all(np.isfinite(v) and v > 0 for v in vals):
        raise ZeroDenominator(f"zero or missing magnitude among states {i}, {j}")
    pfi, pfj, mi, mj = vals
    return float(((pfj / pfi) / (mj / mi) - 1.0) * 100.0)


def _column(P, mode):
    if isinstance(P, PFMatrix):
        P = P.values
    elif hasattr(P, "mpf"):
        P = P.mpf
    P = np.asarray(P)
    if P.ndim == 1:
        return P
    return P[:, mode]


def e2_matrix(pf_col, mpf_col, min_magnitude=0.0):
    """All ordered state pairs; NaN on the diagonal and where a magnitude is
    zero or below ``min_magnitude`` (normalized)."""
    pf_col = np.abs(np.asarray(pf_col))
    mpf_col = np.abs(np.asarray(mpf_col))
    n = pf_col.shape[0]
    out = np.full((n, n), np.nan)
    pn = pf_col / pf_col.max() if pf_col.max() > 0 else pf_col
    for i in range(n):
        for j in range(n):
            if i == j or pn[i] < min_magnitude or pn[j] < min_magnitude:
                continue
            try:
                out[i, j] = error_e2(pf_col, mpf_col, i, j)
            except ZeroDenominator:
                pass
    return out


def match_report_modes(report, model, tol=0.05):
    """Model mode index per report mode (closest eigenvalue with matching
    frequency), ``None`` when nothing is within ``tol`` Hz."""
    lam_model = np.asarray(model.eigenvalues)
    freqs = np.abs(lam_model.imag) / (2 * np.pi)
    cand = [i for i in range(lam_model.shape[0]) if lam_model[i].imag >= 0]
    out = []
    for lam in report.eigenvalues:
        d = [abs(lam_model[i] - lam) for i in cand]
        i = cand[int(np.argmin(d))]
        out.append(i if abs(freqs[i] - abs(lam.imag) / (2 * np.pi)) <= tol else None)
    return out


def compare_report(report, model, initial_states=None, tol=0.05, min_magnitude=0.0):
    """e1 (model decomposition and initial states given) and e2 against the
    model PFs. ``model`` is a :class:`ModalDecomposition` or a
    :class:`PFMatrix`."""
    pf = participation_matrix(model) if isinstance(model, ModalDecomposition) else model
    n = pf.values.shape[0]
    model_modes = match_report_modes(report, pf, tol)
    m = report.n_modes
    e2 = np.full((m, n, n), np.nan)
    for mi, i in enumerate(model_modes):
        if i is not None:
            e2[mi] = e2_matrix(pf.values[:, i], report.mpf[:, mi], min_magnitude)
    e1 = None
    if initial_states is not None and isinstance(model, ModalDecomposition):
        e1 = np.full((n, m), np.nan + 0j)
        idx = [i for i in model_modes if i is not None]
        vals = error_e1_matrix(model, initial_states, idx)
        c = 0
        for mi, i in enumerate(model_modes):
            if i is not None:
                e1[:, mi] = vals[:, c]
                c += 1
    unmatched = [float(report.frequencies[mi]) for mi, i in enumerate(model_modes) if i is None]
    return ErrorReport(e1, e2, list(report.frequencies), model_modes, report.labels,
                       {"unmatched_hz": unmatched, "tol_hz": tol})


# -- conditioning -----------------------------------------------------------------


def coherence(S):
    """Largest normalized inner product between distinct columns of ``S``.

    Returns a :class:`ConditioningReport` with only ``gamma`` and ``pair``
    meaningful (bounds NaN); see :func:`condition_bound`.

    Raises
    ------
    ZeroColumn
        A column of ``S`` is identically zero.
    """
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[1] < 2:
        raise ValueError("need a matrix with at least two columns")
    if np.any(np.linalg.norm(S, axis=0) == 0):
        raise ZeroColumn("sampling matrix has an all-zero column")
    g, i, j = kernels.max_coherence(S)
    return ConditioningReport(min(float(g), 1.0), (int(i), int(j)), np.nan, np.nan, False)


def condition_bound(S, gamma_warn=GAMMA_WARN, cond_warn=COND_WARN, source=""):
    """Coherence, the lower bound on ``cond(S)`` it implies, and the SVD
    condition number. The bound is ``+inf`` when the two coherent columns
    cancel (``s_i = +-s_j``)."""
    S = np.asarray(S, dtype=float)
    rep = coherence(S)
    i, j = rep.pair
    sv = np.linalg.svd(S, compute_uv=False)
    norm2 = sv[0]
    sign = 1.0 if S[:, i] @ S[:, j] >= 0 else -1.0
    denom = np.linalg.norm(S[:, i] - sign * S[:, j])
    scale = np.linalg.norm(S[:, i]) + np.linalg.norm(S[:, j])
    bound = np.inf if denom <= 1e-15 * scale else norm2 / denom
    smin = sv[-1] if S.shape[0] >= S.shape[1] else 0.0
    cond = np.inf if smin <= 0 else norm2 / smin
    warn = bool(rep.gamma > gamma_warn or cond > cond_warn)
    return ConditioningReport(rep.gamma, rep.pair, float(bound), float(cond), warn, source)


def dataset_conditioning(ms, gamma_warn=GAMMA_WARN, cond_warn=COND_WARN):
    """Per-trajectory reports (trajectories with a zero signal are skipped)
    and the worst one (highest condition estimate, then gamma)."""
    reps = []
    for tr in ms:
        try:
            reps.append(condition_bound(tr.states, gamma_warn, cond_warn, tr.scenario_id))
        except ZeroColumn:
            continue
    if not reps:
        return [], None
    worst = max(reps, key=lambda r: (r.condition_estimate, r.gamma))
    return reps, worst


def attach_diagnostics(report, S, model=None, initial_states=None,
                       gamma_warn=GAMMA_WARN, cond_warn=COND_WARN):
    """Embed conditioning (always) and model errors (when ``model`` is a
    :class:`ModalDecomposition` or :class:`PFMatrix`) into
    ``report.diagnostics``.

    ``S`` is a sampling matrix or a measurement set (worst trajectory
    reported). Under a warning, modes in which either coherent state has a
    normalized MPF of at least 0.05 are flagged ``low_confidence``.
    """
    if hasattr(S, "trajectories"):
        reps, worst = dataset_conditioning(S, gamma_warn, cond_warn)
        n_warn = sum(r.warning for r in reps)
    else:
        worst = condition_bound(S, gamma_warn, cond_warn)
        n_warn = int(worst.warning)
    diag = {"conditioning": worst.to_dict() if worst else None,
            "warning_count": n_warn, "low_confidence_modes": []}
    if worst is not None and worst.warning:
        norm = report.normalized
        i, j = worst.pair
        for m in range(report.n_modes):
            hit = [norm[k, m] for k in (i, j) if k < norm.shape[0] and np.isfinite(norm[k, m])]
            if any(v >= LOW_CONFIDENCE_PF for v in hit):
                diag["low_confidence_modes"].append(float(report.frequencies[m]))
                for k in range(norm.shape[0]):
                    report.add_flag(k, m, "low_confidence")
    diag["low_confidence"] = bool(diag["low_confidence_modes"])
    if model is not None:
        if not isinstance(model, (ModalDecomposition, PFMatrix)):
            raise TypeError("model must be a ModalDecomposition or PFMatrix")
        diag["errors"] = compare_report(report, model, initial_states).to_dict()
    report.diagnostics.update(diag)
    return report
