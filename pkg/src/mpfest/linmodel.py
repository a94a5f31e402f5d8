"""Model-based modal analysis: eigenstructure and participation factors."""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as la

from .errors import DefectiveMatrix, DimensionMismatch, NonFinite, ZeroColumn

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class LinearSystem:
    """Autonomous linear system ``dx/dt = A x``."""

    A: np.ndarray
    labels: tuple = ()

    def __post_init__(self):
        A = np.array(self.A, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise DimensionMismatch(f"state matrix must be square, got {A.shape}")
        if not np.all(np.isfinite(A)):
            raise NonFinite("state matrix has NaN/Inf entries")
        labels = tuple(self.labels) if len(self.labels) else tuple(
            f"x{k + 1}" for k in range(A.shape[0])
        )
        if len(labels) != A.shape[0]:
            raise DimensionMismatch(
                f"{len(labels)} labels for a {A.shape[0]}-state system"
            )
        if len(set(labels)) != len(labels):
            raise DimensionMismatch("state labels must be distinct")
        A.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "labels", tuple(str(s) for s in labels))

    @property
    def n(self):
        return self.A.shape[0]

    def to_dict(self):
        return {"labels": list(self.labels), "A": self.A.tolist()}

    @classmethod
    def from_dict(cls, doc):
        if "A" not in doc:
            raise KeyError("system document needs an 'A' entry")
        return cls(np.asarray(doc["A"], dtype=float), tuple(doc.get("labels", ())))

    @classmethod
    def from_json(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class ModalDecomposition:
    """Eigenvalues with right (columns of ``right``) and left (rows of
    ``left``) eigenvectors, normalized so that ``left @ right = I``.

    Ordering: descending ``|Im|``, then descending ``Re``; within a conjugate
    pair the positive-frequency member comes first. ``partner[i]`` is the
    index of the conjugate of mode ``i`` (``i`` itself for real modes).
    """

    eigenvalues: np.ndarray
    right: np.ndarray
    left: np.ndarray
    partner: np.ndarray
    labels: tuple = field(default=())

    @property
    def n(self):
        return self.eigenvalues.shape[0]

    @property
    def frequencies(self):
        """Hz per mode, ``|Im lambda| / 2 pi``."""
        return np.abs(self.eigenvalues.imag) / TWO_PI

    @property
    def damping_ratios(self):
        lam = self.eigenvalues
        return -lam.real / np.abs(lam)

    def representatives(self):
        """One index per oscillatory pair (positive frequency) plus real modes."""
        return [i for i in range(self.n) if self.eigenvalues[i].imag >= 0.0]

    def mode_for_frequency(self, hz, tol=0.05):
        """Representative mode closest to ``hz``, or ``None`` beyond ``tol``."""
        reps = self.representatives()
        d = [abs(self.frequencies[i] - hz) for i in reps]
        k = int(np.argmin(d))
        return reps[k] if d[k] <= tol else None

    def transformed(self, H):
        """Same modes expressed in coordinates ``z = H x``."""
        H = np.asarray(H, dtype=float)
        return ModalDecomposition(
            self.eigenvalues,
            H @ self.right,
            self.left @ np.linalg.inv(H),
            self.partner,
            (),
        )


@dataclass(frozen=True)
class PFMatrix:
    """Participation factors ``values[k, i]`` of state ``k`` in mode ``i``."""

    values: np.ndarray
    eigenvalues: np.ndarray
    labels: tuple = ()

    @property
    def magnitude(self):
        return np.abs(self.values)

    @property
    def mode_frequencies(self):
        return np.abs(self.eigenvalues.imag) / TWO_PI

    def normalized(self, mode):
        return normalize_pf_column(self, mode)


def _order(lam):
    return sorted(
        range(lam.shape[0]),
        key=lambda i: (-abs(lam[i].imag), -lam[i].real, -lam[i].imag, i),
    )


def modal_decompose(sys, defect_tol=1e-8):
    """Eigendecomposition of ``sys.A`` with the package-wide normalization.

    Each right eigenvector is scaled so its largest-magnitude entry is real
    and positive; left eigenvectors then satisfy ``psi_i phi_i = 1``.
    Conjugate modes carry exactly conjugate vectors.
    """
    A = sys.A if isinstance(sys, LinearSystem) else np.asarray(sys, dtype=float)
    labels = sys.labels if isinstance(sys, LinearSystem) else ()
    if not np.all(np.isfinite(A)):
        raise NonFinite("state matrix has NaN/Inf entries")
    n = A.shape[0]
    scale = max(np.linalg.norm(A, 2), np.finfo(float).tiny)
    w, vl, vr = la.eig(A, left=True, right=True)

    # real eigenvalues from a real matrix: drop rounding residue
    imag_tol = 1e-12 * scale
    w = np.where(np.abs(w.imag) <= imag_tol, w.real + 0j, w)

    # defectiveness: near-coincident eigenvalues with a singular basis
    close = np.abs(w[:, None] - w[None, :]) <= defect_tol * np.maximum(
        np.abs(w[:, None]), scale
    )
    np.fill_diagonal(close, False)
    if close.any():
        cond = np.linalg.cond(vr / np.linalg.norm(vr, axis=0))
        if not np.isfinite(cond) or cond > 1e12:
            raise DefectiveMatrix(
                f"repeated eigenvalues with a singular eigenvector basis (cond {cond:.3g})"
            )

    order = _order(w)
    lam = w[order]
    phi = vr[:, order].astype(complex)
    psi = vl[:, order].conj().T.astype(complex)

    # conjugate partners
    partner = np.arange(n)
    taken = np.zeros(n, bool)
    for i in range(n):
        if lam[i].imag > 0 and not taken[i]:
            target = lam[i].conjugate()
            cand = [j for j in range(n) if lam[j].imag < 0 and not taken[j]]
            j = min(cand, key=lambda j: abs(lam[j] - target))
            partner[i], partner[j] = j, i
            taken[i] = taken[j] = True

    for i in range(n):
        if lam[i].imag < 0:
            continue
        v = phi[:, i]
        k = int(np.argmax(np.abs(v)))
        v = v * (abs(v[k]) / v[k])
        if lam[i].imag == 0:
            v = v.real + 0j
        phi[:, i] = v
        if partner[i] != i:
            phi[:, partner[i]] = v.conj()
            lam[partner[i]] = lam[i].conjugate()

    # left vectors: rescale the LAPACK ones to psi_i phi_i = 1; repeated or
    # clustered eigenvalues break biorthogonality, use the inverse then
    for i in range(n):
        if lam[i].imag < 0:
            continue
        s = psi[i] @ phi[:, i]
        if s == 0:
            break
        psi[i] = psi[i] / s
        if lam[i].imag == 0:
            psi[i] = psi[i].real + 0j
        if partner[i] != i:
            psi[partner[i]] = psi[i].conj()
    if not np.allclose(psi @ phi, np.eye(n), rtol=0.0, atol=1e-10):
        psi = np.linalg.inv(phi)

    return ModalDecomposition(lam, phi, psi, partner, labels)


def participation_matrix(dec):
    """``P = Phi o Psi^T``: entry ``[k, i]`` is ``psi_ik phi_ki``."""
    P = dec.right * dec.left.T
    return PFMatrix(P, dec.eigenvalues, dec.labels)


def participation_factor(dec, k, i):
    """Single entry ``psi_ik phi_ki``."""
    return dec.left[i, k] * dec.right[k, i]


def normalize_pf_column(P, mode, floor=1e-14):
    """``|p_ki| / max_k |p_ki|`` for one mode; the maximum entry is exactly 1."""
    values = P.values if isinstance(P, PFMatrix) else np.asarray(P)
    col = np.abs(values[:, mode])
    peak = col.max()
    if not peak >= floor:
        raise ZeroColumn(f"mode {mode} has no participation above {floor:g}")
    return col / peak
