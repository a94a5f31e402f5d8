"""Least-squares Prony analysis of multi-signal ringdowns.

All signals of one fit share a single linear-prediction polynomial, so every
state sees the same set of poles; amplitudes are then solved per signal from
the Vandermonde system.
"""

from dataclasses import dataclass

import numpy as np

from .errors import IllConditioned, NoMatch, OrderTooHigh

COND_LIMIT = 1e12
RCOND = 1e-12


@dataclass(frozen=True)
class PronyFit:
    """Poles ``eigenvalues[r]`` (1/s) and ``amplitudes[m, r]`` per signal ``m``.

    The reconstruction of signal ``m`` at sample ``n`` of the window is
    ``sum_r amplitudes[m, r] * exp(eigenvalues[r] * n * dt)``.
    """

    eigenvalues: np.ndarray
    amplitudes: np.ndarray
    order: int
    residual_rms: float
    window: tuple
    dt: float
    signal_rms: float = 0.0

    @property
    def frequencies(self):
        return np.abs(self.eigenvalues.imag) / (2 * np.pi)

    def reconstruct(self, n_samples=None):
        n = (self.window[1] - self.window[0]) if n_samples is None else n_samples
        V = np.exp(np.outer(np.arange(n) * self.dt, self.eigenvalues))
        return (V @ self.amplitudes.T).real

    @property
    def low_confidence(self):
        return self.signal_rms > 0 and self.residual_rms > 0.5 * self.signal_rms


def _as_signals(x):
    x = np.asarray(x, dtype=float)
    return x[:, None] if x.ndim == 1 else x


def _prediction_system(segments, order, lag):
    rows, rhs = [], []
    for X in segments:
        T = X.shape[0]
        if T <= order * lag:
            continue
        # x[n] = -sum_m a_m x[n - m*lag]
        for m in range(X.shape[1]):
            x = X[:, m]
            cols = [x[order * lag - j * lag: T - j * lag] for j in range(1, order + 1)]
            rows.append(np.stack(cols, axis=1))
            rhs.append(x[order * lag:])
    return np.concatenate(rows), np.concatenate(rhs)


def default_prediction_order(order, n_samples, lag=1, factor=10):
    """Over-ordered prediction length used with rank truncation."""
    cap = max(order, (n_samples - 1) // (2 * lag))
    return int(min(factor * order, cap))


def _reduced_svd(Phi, y):
    """SVD of a tall ``Phi`` through its triangular factor.

    Returns ``(U_r, s, Vt, U^T y)``; the tall left factor is never formed.
    """
    R = np.linalg.qr(np.column_stack([Phi, y]), mode="r")
    k = Phi.shape[1]
    Ur, sv, Vt = np.linalg.svd(R[:k, :k])
    return Ur, sv, Vt, Ur.T @ R[:k, k]


def fit_poles(segments, dt, order, lag=1, prediction_order=None, check=True):
    """Common poles of all signals in ``segments`` (a list of ``T_l x M``
    arrays, possibly of different lengths).

    The prediction polynomial has length ``prediction_order`` (default ten
    times ``order``) and is solved in the rank-``order`` truncated SVD sense;
    of its roots the ``order`` carrying the most energy in the data are kept,
    conjugate pairs together. With ``prediction_order == order`` this is the
    plain least-squares Prony step.
    """
    segments = [_as_signals(s) for s in segments]
    T_max = max(s.shape[0] for s in segments)
    if order < 1:
        raise ValueError("order must be >= 1")
    if T_max < 2 * order * lag + 1:
        raise OrderTooHigh(f"{T_max} samples cannot support order {order}")
    L = prediction_order or default_prediction_order(order, T_max, lag)
    L = max(L, order)
    Phi, y = _prediction_system(segments, L, lag)
    scale = np.max(np.abs(Phi)) if Phi.size else 0.0
    if scale == 0.0:
        return np.zeros(0, complex)
    U, sv, Vt, uty = _reduced_svd(Phi / scale, y / scale)
    cond = sv[0] / sv[order - 1] if sv[order - 1] > 0 else np.inf
    if check and cond > COND_LIMIT:
        raise IllConditioned(
            f"linear-prediction system has condition number {cond:.3g} "
            f"(order {order} may exceed the number of modes in the data)"
        )
    keep = order if L > order else int(np.sum(sv > RCOND * sv[0]))
    a = -(Vt[:keep].T @ (uty[:keep] / sv[:keep]))
    z = np.roots(np.concatenate(([1.0], a)))
    z = z[np.abs(z) > 1e-12]
    lam = np.log(z.astype(complex)) / (lag * dt)
    lam = np.where(np.abs(lam.imag) <= 1e-12 * np.abs(lam), lam.real + 0j, lam)
    lam = _sort_poles(lam)
    if lam.shape[0] > order:
        lam = _dominant(segments, dt, lam, order)
    return lam


def _dominant(segments, dt, lam, order):
    energy = np.zeros(lam.shape[0])
    for X in segments:
        C, _ = fit_amplitudes(X, dt, lam, check=False)
        n = np.arange(X.shape[0]) * dt
        decay = np.sum(np.abs(np.exp(np.outer(n, lam))) ** 2, axis=0)
        energy += np.sum(np.abs(C) ** 2, axis=0) * decay
    groups, i = [], 0
    while i < lam.shape[0]:
        if lam[i].imag > 0 and i + 1 < lam.shape[0] and lam[i + 1] == lam[i].conjugate():
            groups.append([i, i + 1])
            i += 2
        else:
            groups.append([i])
            i += 1
    groups.sort(key=lambda g: -sum(energy[j] for j in g))
    chosen = []
    for g in groups:
        if len(chosen) + len(g) <= order:
            chosen.extend(g)
        if len(chosen) == order:
            break
    return _sort_poles(lam[sorted(chosen)])


def _sort_poles(lam):
    order = sorted(range(lam.shape[0]),
                   key=lambda i: (-abs(lam[i].imag), -lam[i].real, -lam[i].imag))
    lam = lam[order]
    # pair members share |Im| and Re; force exact conjugates
    i = 0
    while i < lam.shape[0] - 1:
        if lam[i].imag > 0 and abs(lam[i + 1] - lam[i].conjugate()) <= 1e-6 * abs(lam[i]):
            lam[i + 1] = lam[i].conjugate()
            i += 2
        else:
            i += 1
    return lam


def fit_amplitudes(signals, dt, eigenvalues, check=True):
    """Least-squares amplitudes of ``signals`` on fixed poles.

    Returns ``(amplitudes[M, r], residual_rms)``.
    """
    X = _as_signals(signals)
    lam = np.asarray(eigenvalues, dtype=complex)
    if lam.shape[0] == 0:
        return np.zeros((X.shape[1], 0), complex), float(np.sqrt(np.mean(X ** 2)))
    V = np.exp(np.outer(np.arange(X.shape[0]) * dt, lam))
    if check:
        sv = np.linalg.svd(V, compute_uv=False)
        cond = sv[0] / sv[-1] if sv[-1] > 0 else np.inf
        if cond > COND_LIMIT:
            raise IllConditioned(f"Vandermonde system has condition number {cond:.3g}")
    C, *_ = np.linalg.lstsq(V, X.astype(complex), rcond=RCOND)
    resid = X - (V @ C).real
    return C.T, float(np.sqrt(np.mean(resid ** 2)))


def auto_lag(segments, dt, tail=1e-4, snr=100.0, max_lag=64):
    """Prediction lag keeping the highest significant frequency below an
    eighth of a cycle per lag.

    The band edge is the lower of two estimates from the pooled, Hann-tapered
    power spectrum: the frequency leaving only ``tail`` of the energy above
    it, and the highest bin exceeding ``snr`` times the noise floor (median
    power of the upper half band). Heavily oversampled ringdowns cluster all
    roots near ``z = 1``; lagging the prediction spreads them out without
    discarding samples.
    """
    segments = [_as_signals(s) for s in segments]
    T = max(s.shape[0] for s in segments)
    nfft = 1 << int(np.ceil(np.log2(max(T, 8))))
    power = np.zeros(nfft // 2 + 1)
    for X in segments:
        # Hann taper: truncation leakage would otherwise fake a wide band
        w = np.hanning(X.shape[0])[:, None]
        power += np.sum(np.abs(np.fft.rfft(X * w, n=nfft, axis=0)) ** 2, axis=1)
    total = power.sum()
    if total == 0.0:
        return 1
    cum = np.cumsum(power) / total
    k_tail = int(np.searchsorted(cum, 1.0 - tail))
    floor = np.median(power[power.shape[0] // 2:])
    above = np.nonzero(power > snr * floor)[0]
    k_snr = int(above[-1]) if above.size else k_tail
    f_hi = max(min(k_tail, k_snr), 1) / (nfft * dt)
    lag = int(np.floor(1.0 / (8.0 * f_hi * dt)))
    return int(min(max(lag, 1), max_lag, max(1, (T - 1) // 4)))


def fit_prony(signals, dt, order, window=None, lag="auto", prediction_order=None,
              check=True):
    """Two-stage least-squares Prony fit of the columns of ``signals``.

    Stage one solves the shared linear-prediction polynomial over all
    columns (see :func:`fit_poles`); its roots ``z_r`` give
    ``lambda_r = ln(z_r) / (lag * dt)``.
    Stage two solves the Vandermonde least squares for each column's complex
    amplitudes. An all-zero input returns no modes and zero residual.
    ``lag="auto"`` picks the prediction lag with :func:`auto_lag`.

    Raises
    ------
    OrderTooHigh
        Fewer than ``2 * order + 1`` samples in the window.
    IllConditioned
        Either least-squares system has condition number above 1e12.
    """
    X = _as_signals(signals)
    start, stop = (0, X.shape[0]) if window is None else window
    X = X[start:stop]
    if X.shape[0] < 2 * order + 1:
        raise OrderTooHigh(f"{X.shape[0]} samples cannot support order {order}")
    srms = float(np.sqrt(np.mean(X ** 2)))
    if srms == 0.0:
        return PronyFit(np.zeros(0, complex), np.zeros((X.shape[1], 0), complex),
                        order, 0.0, (start, stop), dt, 0.0)
    if lag == "auto":
        lag = auto_lag([X], dt)
    lam = fit_poles([X], dt, order, lag=lag, prediction_order=prediction_order,
                    check=check)
    C, res = fit_amplitudes(X, dt, lam, check=check)
    return PronyFit(lam, C, order, res, (start, stop), dt, srms)


def select_order(signals, dt, max_order, tol=1e-6, sv_cutoff=1e-8, lag=1):
    """Smallest order reconstructing the data to ``tol`` x RMS.

    Failing that (noisy data), the numerical rank of the prediction matrix
    at ``max_order`` (singular values above ``sv_cutoff`` relative) caps
    the search and the order with the smallest residual is returned.
    """
    segments = signals if isinstance(signals, (list, tuple)) else [signals]
    segments = [_as_signals(s) for s in segments]
    X = np.concatenate(segments)
    srms = float(np.sqrt(np.mean(X ** 2)))
    if srms == 0.0:
        return 1
    T_max = max(s.shape[0] for s in segments)
    max_order = min(max_order, (T_max - 1) // (2 * lag))
    best, best_res = 1, np.inf
    for p in range(1, max_order + 1):
        res = _order_residual(segments, dt, p, lag)
        if res <= tol * srms:
            return p
        if res < best_res * (1 - 1e-9):
            best, best_res = p, res
    Phi, _ = _prediction_system(segments, max_order, lag)
    sv = np.linalg.svd(Phi, compute_uv=False)
    rank = int(np.sum(sv > sv_cutoff * sv[0]))
    if best > rank:
        best = max(1, min(best, rank))
    return best


def _order_residual(segments, dt, order, lag):
    try:
        lam = fit_poles(segments, dt, order, lag=lag, check=False)
    except OrderTooHigh:
        return np.inf
    tot, cnt = 0.0, 0
    for X in segments:
        _, r = fit_amplitudes(X, dt, lam, check=False)
        tot += r ** 2 * X.size
        cnt += X.size
    return float(np.sqrt(tot / cnt))


def match_tolerance(lam_ref):
    return 0.1 * abs(lam_ref) + 0.05


def match_modes(fit, reference, required=None):
    """Greedy nearest-pole assignment ``{fit index: reference index}``.

    Pairs are taken in order of increasing ``|delta lambda|``; each reference
    pole is used at most once and a match is rejected beyond
    ``0.1 |lambda_ref| + 0.05``. Raises :class:`NoMatch` if any reference
    index in ``required`` (default: all) stays unmatched.
    """
    lam_fit = fit.eigenvalues if isinstance(fit, PronyFit) else np.asarray(fit)
    lam_ref = np.asarray(reference, dtype=complex)
    D = np.abs(lam_fit[:, None] - lam_ref[None, :])
    cand = sorted(
        ((D[i, j], i, j) for i in range(D.shape[0]) for j in range(D.shape[1])
         if D[i, j] <= match_tolerance(lam_ref[j])),
    )
    mapping, used_ref = {}, set()
    for _, i, j in cand:
        if i in mapping or j in used_ref:
            continue
        mapping[i] = j
        used_ref.add(j)
    need = range(lam_ref.shape[0]) if required is None else required
    missing = [j for j in need if j not in used_ref]
    if missing:
        raise NoMatch(
            "no fitted pole within tolerance of reference "
            + ", ".join(f"{lam_ref[j]:.4g}" for j in missing)
        )
    return mapping
