"""Synthetic measurement datasets for linear systems.

Responses come either from the closed-form modal expansion or from a
fixed-step RK4 integrator (the independent oracle for the former). All
randomness is seeded per scenario so serial and parallel generation agree.
"""

import csv
import itertools
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import kernels
from .errors import DimensionMismatch, EmptyInput, NonFinite, NonUniformTimes
from .linmodel import LinearSystem, ModalDecomposition, modal_decompose


@dataclass(frozen=True)
class Trajectory:
    """One sampled response; row ``t`` of ``states`` is the state at ``times[t]``."""

    times: np.ndarray
    states: np.ndarray
    scenario_id: str = "s0"

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        X = np.asarray(self.states, dtype=float)
        if X.ndim != 2 or X.shape[0] != t.shape[0]:
            raise DimensionMismatch(
                f"{t.shape[0]} timestamps for a state array of shape {X.shape}"
            )
        if t.shape[0] >= 2:
            _check_uniform(t)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "states", X)

    @property
    def x0(self):
        return self.states[0]

    @property
    def dt(self):
        return float(self.times[1] - self.times[0])

    @property
    def n(self):
        return self.states.shape[1]

    def __len__(self):
        return self.times.shape[0]


@dataclass(frozen=True)
class MeasurementSet:
    trajectories: tuple
    labels: tuple
    dt: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        trajs = tuple(self.trajectories)
        if not trajs:
            raise EmptyInput("measurement set has no trajectories")
        n = len(self.labels)
        for tr in trajs:
            if tr.n != n:
                raise DimensionMismatch(
                    f"trajectory {tr.scenario_id} has {tr.n} states, expected {n}"
                )
            if len(tr) >= 2 and not np.isclose(tr.dt, self.dt, rtol=1e-9, atol=0):
                raise NonUniformTimes(
                    f"trajectory {tr.scenario_id} has dt {tr.dt}, expected {self.dt}"
                )
        object.__setattr__(self, "trajectories", trajs)
        object.__setattr__(self, "labels", tuple(self.labels))

    @property
    def n(self):
        return len(self.labels)

    @property
    def sample_rate(self):
        return 1.0 / self.dt

    def __len__(self):
        return len(self.trajectories)

    def __iter__(self):
        return iter(self.trajectories)

    def map_states(self, H):
        """Apply ``x -> H x`` to every sample (see :mod:`mpfest.transform`)."""
        H = np.asarray(H, dtype=float)
        trajs = tuple(
            Trajectory(tr.times, tr.states @ H.T, tr.scenario_id) for tr in self
        )
        labels = self.labels if H.shape[0] == self.n else tuple(
            f"z{k + 1}" for k in range(H.shape[0])
        )
        return MeasurementSet(trajs, labels, self.dt, dict(self.meta))

    def select(self, columns):
        """Coordinate projection onto ``columns`` (indices or labels)."""
        idx = [self.labels.index(c) if isinstance(c, str) else int(c) for c in columns]
        trajs = tuple(
            Trajectory(tr.times, tr.states[:, idx], tr.scenario_id) for tr in self
        )
        return MeasurementSet(
            trajs, tuple(self.labels[i] for i in idx), self.dt, dict(self.meta)
        )


@dataclass(frozen=True)
class AmplitudeMatrix:
    """Modal amplitudes per segment: ``B[l, k, i]`` multiplies ``exp(lambda_i t)``
    in state ``k`` of segment ``l``."""

    B: np.ndarray
    eigenvalues: np.ndarray
    initial_states: np.ndarray
    source: str = "exact"

    @property
    def segments(self):
        return self.B.shape[0]


def _check_uniform(t):
    d = np.diff(t)
    if np.any(d <= 0):
        raise NonUniformTimes("times must be strictly increasing")
    step = (t[-1] - t[0]) / (t.shape[0] - 1)
    if np.max(np.abs(d - step)) > 1e-9 * max(abs(step), 1e-300) + 1e-12 * np.max(np.abs(t)):
        raise NonUniformTimes("times are not uniformly spaced")


def _decomp(sys_or_dec):
    if isinstance(sys_or_dec, ModalDecomposition):
        return sys_or_dec
    return modal_decompose(sys_or_dec)


def modal_amplitudes_exact(dec, x0):
    """``B[k, i] = (psi_i . x0) phi_ki``."""
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (dec.n,):
        raise DimensionMismatch(f"x0 has shape {x0.shape}, expected ({dec.n},)")
    return dec.right * (dec.left @ x0)[None, :]


def exact_amplitude_set(dec, initial_states):
    X0 = np.atleast_2d(np.asarray(initial_states, dtype=float))
    B = np.stack([modal_amplitudes_exact(dec, x0) for x0 in X0])
    return AmplitudeMatrix(B, dec.eigenvalues.copy(), X0, "exact")


def uniform_times(duration, dt):
    steps = int(round(duration / dt)) + 1
    return np.arange(steps) * dt


def analytic_response(dec, x0, times, scenario_id="s0"):
    """Closed-form ``x(t) = sum_i B_i exp(lambda_i t)``; first row is ``x0``."""
    times = np.asarray(times, dtype=float)
    if times.shape[0] >= 2:
        _check_uniform(times)
    x0 = np.asarray(x0, dtype=float)
    c = dec.left @ x0
    E = np.exp(np.outer(times - times[0], dec.eigenvalues)) * c[None, :]
    X = E @ dec.right.T
    scale = max(np.max(np.abs(X)), 1.0)
    if np.max(np.abs(X.imag)) > 1e-9 * scale:
        raise NonFinite(
            f"modal expansion left an imaginary residue of {np.max(np.abs(X.imag)):.3g}"
        )
    X = np.ascontiguousarray(X.real)
    X[0] = x0
    return Trajectory(times, X, scenario_id)


def rk4_matrix(A, h):
    """One classical RK4 step for ``dx/dt = A x`` as a matrix."""
    n = A.shape[0]
    hA = h * np.asarray(A, dtype=float)
    M = np.eye(n)
    term = np.eye(n)
    for k in range(1, 5):
        term = term @ hA / k
        M = M + term
    return M


def integrate_response(sys, x0, dt, steps, substeps=None, scenario_id="s0"):
    """Fixed-step RK4 integration returning ``steps`` samples spaced ``dt``.

    ``substeps`` RK4 steps are taken per output sample; by default enough to
    keep ``h * ||A||`` at or below 0.02.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if steps < 2:
        raise ValueError("steps must be at least 2")
    A = sys.A if isinstance(sys, LinearSystem) else np.asarray(sys, dtype=float)
    if substeps is None:
        substeps = max(1, int(np.ceil(dt * np.linalg.norm(A, 2) / 0.02)))
    M = np.linalg.matrix_power(rk4_matrix(A, dt / substeps), substeps)
    X, valid = kernels.propagate(M, np.asarray(x0, dtype=float), steps)
    if valid < steps:
        raise NonFinite(f"integration blew up after {valid} samples (|x| > 1e12)")
    return Trajectory(np.arange(steps) * dt, X, scenario_id)


def add_noise(traj, sigma, seed):
    """Additive white Gaussian noise with standard deviation ``sigma``
    (scalar or one value per state); all-zero ``sigma`` returns ``traj``."""
    sigma = np.asarray(sigma, dtype=float)
    if np.any(sigma < 0):
        raise ValueError("sigma must be non-negative")
    if not np.any(sigma):
        return traj
    rng = np.random.default_rng(seed)
    noisy = traj.states + rng.normal(0.0, sigma, traj.states.shape)
    return Trajectory(traj.times, noisy, traj.scenario_id)


# -- initial-state samplers --------------------------------------------------
#
# A sampler is called as sampler(n, count, rng) and returns count x n.


def hyperrectangle_vertices(half_widths):
    """All ``2^n`` vertices of the box ``prod [-w_k, w_k]``, binary order."""
    w = np.asarray(half_widths, dtype=float)
    signs = np.array(list(itertools.product((-1.0, 1.0), repeat=w.shape[0])))
    return signs * w[None, :]


def parallelotope_vertices(edges):
    """The ``2^n`` vertices ``E (a - 1/2)``, ``a`` in ``{0, 1}^n``: a
    parallelotope centred on the origin with edge vectors = columns of ``E``.
    Vertex ``v`` and vertex ``2^n - 1 - v`` are mirror images."""
    E = np.asarray(edges, dtype=float)
    a = np.array(list(itertools.product((0.0, 1.0), repeat=E.shape[1])))
    return (a - 0.5) @ E.T


class VertexSampler:
    """Vertices of a centred parallelotope (axis-aligned box when ``edges``
    is diagonal), optionally jittered by ``jitter`` times a per-state scale."""

    def __init__(self, edges, jitter=0.0):
        self.edges = np.asarray(edges, dtype=float)
        self.jitter = float(jitter)

    def vertices(self):
        return parallelotope_vertices(self.edges)

    def __call__(self, n, count, rng):
        V = self.vertices()
        if V.shape[1] != n:
            raise DimensionMismatch(f"sampler is {V.shape[1]}-D, system is {n}-D")
        if count is None:
            count = V.shape[0]
        if count > V.shape[0]:
            raise ValueError(f"only {V.shape[0]} vertices available, asked for {count}")
        V = V[:count]
        if self.jitter:
            rms = np.sqrt(np.mean(V ** 2, axis=0))
            V = V + self.jitter * rms * rng.uniform(-1.0, 1.0, V.shape)
        return V


class BoxSampler:
    """Uniform random initial states in ``[-scale, scale]^n``."""

    def __init__(self, scale=1.0):
        self.scale = np.asarray(scale, dtype=float)

    def __call__(self, n, count, rng):
        return rng.uniform(-1.0, 1.0, (count, n)) * self.scale


class PointSampler:
    def __init__(self, points):
        self.points = np.atleast_2d(np.asarray(points, dtype=float))

    def __call__(self, n, count, rng):
        if count is None:
            count = self.points.shape[0]
        return self.points[:count]


def scenario_rng(seed, index):
    return np.random.default_rng([int(seed), int(index)])


def generate_scenarios(sys, sampler, count, duration, dt=None, seed=0,
                       noise_sigma=0.0, method="analytic", observed=None,
                       dec=None):
    """One trajectory per sampled initial state.

    ``sampler`` is any callable ``(n, count, rng) -> count x n``, or a
    ready ``count x n`` array. ``observed`` restricts the recorded states
    (unmeasured states still evolve). Default ``dt`` gives 100 samples per
    period of the fastest mode.
    """
    if not isinstance(sys, LinearSystem):
        sys = LinearSystem(np.asarray(sys, dtype=float))
    dec = dec or modal_decompose(sys)
    if dt is None:
        wmax = np.max(np.abs(dec.eigenvalues.imag))
        dt = (2 * np.pi / wmax) / 100 if wmax > 0 else duration / 1000
    if callable(sampler):
        rng = np.random.default_rng([int(seed), 0, 0])
        X0 = np.asarray(sampler(sys.n, count, rng), dtype=float)
    else:
        X0 = np.atleast_2d(np.asarray(sampler, dtype=float))
        if count is not None:
            X0 = X0[:count]
    if X0.shape[0] < 1:
        raise EmptyInput("sampler produced no initial states")
    times = uniform_times(duration, dt)
    width = max(3, len(str(X0.shape[0] - 1)))
    cols = None
    if observed is not None:
        cols = [sys.labels.index(c) if isinstance(c, str) else int(c) for c in observed]
    trajs = []
    for l, x0 in enumerate(X0):
        sid = f"s{l:0{width}d}"
        if method == "analytic":
            tr = analytic_response(dec, x0, times, sid)
        elif method == "integrate":
            tr = integrate_response(sys, x0, dt, times.shape[0], scenario_id=sid)
        else:
            raise ValueError(f"unknown simulation method {method!r}")
        if cols is not None:
            tr = Trajectory(tr.times, tr.states[:, cols], sid)
        if np.any(noise_sigma):
            tr = add_noise(tr, noise_sigma, [int(seed), l, 1])
        trajs.append(tr)
    labels = sys.labels if cols is None else tuple(sys.labels[c] for c in cols)
    return MeasurementSet(tuple(trajs), labels, float(dt))


# -- files ---------------------------------------------------------------------


def write_trajectory_csv(traj, path, labels):
    """Header ``t,<labels>``; values as ``repr`` floats (round-trip exact).
    ``path`` may also be an open text stream."""
    if hasattr(path, "write"):
        _write_rows(traj, path, labels)
        return
    with open(path, "w", newline="") as fh:
        _write_rows(traj, fh, labels)


def _write_rows(traj, fh, labels):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["t", *labels])
    for t, row in zip(traj.times, traj.states):
        w.writerow([repr(float(t)), *(repr(float(v)) for v in row)])


def read_trajectory_csv(path, scenario_id=None):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "t":
        raise ValueError(f"{path}: expected a header starting with 't'")
    data = np.array(rows[1:], dtype=float)
    sid = scenario_id or Path(path).stem
    return Trajectory(data[:, 0], data[:, 1:], sid), tuple(rows[0][1:])


def manifest_dict(ms, paths):
    return {
        "dt": ms.dt,
        "sample_rate": ms.sample_rate,
        "labels": list(ms.labels),
        "trajectories": [
            {"scenario_id": tr.scenario_id, "path": str(p)}
            for tr, p in zip(ms, paths)
        ],
        "meta": ms.meta,
    }


def load_measurement_set(manifest_path):
    manifest_path = Path(manifest_path)
    doc = json.loads(manifest_path.read_text())
    base = manifest_path.parent
    trajs = []
    for entry in doc["trajectories"]:
        p = Path(entry["path"])
        tr, labels = read_trajectory_csv(base / p if not p.is_absolute() else p,
                                         entry["scenario_id"])
        if tuple(labels) != tuple(doc["labels"]):
            raise DimensionMismatch(f"{p}: header labels differ from manifest")
        trajs.append(tr)
    return MeasurementSet(tuple(trajs), tuple(doc["labels"]), float(doc["dt"]),
                          doc.get("meta", {}))


def with_meta(ms, **meta):
    return replace(ms, meta={**ms.meta, **meta})
