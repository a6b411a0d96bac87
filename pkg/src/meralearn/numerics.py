"""Dense complex linear algebra shared by the rest of the package.

Block operators use kron ordering of the listed sites: the first listed
qubit is the most significant tensor factor.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np


@dataclass(frozen=True)
class Tolerances:
    """Default numerical tolerances used across the package."""

    hermitian: float = 1e-10
    unitary: float = 1e-10
    unitary_input: float = 1e-8
    unitary_file: float = 1e-6
    trace: float = 1e-10
    phase_fix: float = 1e-8
    degenerate: float = 1e-12
    postselect_min: float = 1e-14


TOL = Tolerances()

I2 = np.eye(2, dtype=complex)
X = np.array([[0, 1], [1, 0]], dtype=complex)
Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
Z = np.array([[1, 0], [0, -1]], dtype=complex)
PAULI = {"I": I2, "X": X, "Y": Y, "Z": Z}
LETTERS = "IXYZ"


class NotHermitianError(ValueError):
    pass


def hermiticity_defect(h: np.ndarray) -> float:
    return float(np.max(np.abs(h - h.conj().T))) if h.size else 0.0


def _check_finite(a: np.ndarray) -> None:
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")


def _require_hermitian(h: np.ndarray, tol: float) -> np.ndarray:
    h = np.asarray(h, dtype=complex)
    if h.ndim != 2 or h.shape[0] != h.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {h.shape}")
    _check_finite(h)
    defect = hermiticity_defect(h)
    if defect > tol:
        raise NotHermitianError(f"matrix is not Hermitian: max|H - H^dag| = {defect:.3e}")
    return h


def kron_all(mats: Iterable[np.ndarray]) -> np.ndarray:
    out = np.ones((1, 1), dtype=complex)
    for m in mats:
        out = np.kron(out, m)
    return out


def _phase_fix(vecs: np.ndarray, tol: float) -> np.ndarray:
    vecs = vecs.copy()
    for k in range(vecs.shape[1]):
        v = vecs[:, k]
        idx = np.flatnonzero(np.abs(v) > tol)
        if idx.size:
            c = v[idx[0]]
            vecs[:, k] = v * (abs(c) / c)
    return vecs


def eig_hermitian(h: np.ndarray, tol: Tolerances = TOL) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a Hermitian matrix, eigenvalues descending.

    Each eigenvector is rescaled so that its first component of magnitude
    above ``tol.phase_fix`` is real and positive. Within a group of equal
    eigenvalues the vectors are ordered lexicographically by their
    components (real part, then imaginary part), largest first.
    """
    h = _require_hermitian(h, tol.hermitian)
    w, v = np.linalg.eigh((h + h.conj().T) / 2)
    w = w[::-1]
    v = _phase_fix(v[:, ::-1], tol.phase_fix)
    order = list(range(len(w)))
    i = 0
    while i < len(w):
        j = i + 1
        while j < len(w) and abs(w[i] - w[j]) <= tol.degenerate:
            j += 1
        if j - i > 1:
            group = order[i:j]
            group.sort(key=lambda k: tuple(-x for c in v[:, k] for x in (c.real, c.imag)))
            order[i:j] = group
        i = j
    return w[order], v[:, order]


def expm_hermitian(h: np.ndarray, t: float, tol: Tolerances = TOL) -> np.ndarray:
    """exp(-i t H) via eigendecomposition."""
    h = _require_hermitian(h, tol.hermitian)
    w, v = np.linalg.eigh((h + h.conj().T) / 2)
    return (v * np.exp(-1j * t * w)) @ v.conj().T


def partial_trace(rho: np.ndarray, qubit_count: int, keep: Iterable[int]) -> np.ndarray:
    """Trace out every qubit not in ``keep`` (1-based, kron order).

    The kept qubits appear in increasing order in the result.
    """
    keep = sorted(set(keep))
    if not keep:
        raise ValueError("keep must be non-empty")
    if keep[0] < 1 or keep[-1] > qubit_count:
        raise ValueError(f"keep {keep} out of range 1..{qubit_count}")
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (2**qubit_count, 2**qubit_count):
        raise ValueError(f"rho has shape {rho.shape}, expected {2**qubit_count} square")
    q = qubit_count
    t = rho.reshape((2,) * (2 * q))
    drop = [k for k in range(1, q + 1) if k not in keep]
    # trace from the highest axis down so lower axis numbers stay valid
    for k in sorted(drop, reverse=True):
        cur = t.ndim // 2
        t = np.trace(t, axis1=k - 1, axis2=cur + k - 1)
    d = 2 ** len(keep)
    return t.reshape(d, d)


def haar_unitary(dim: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-random unitary from a Ginibre draw and QR with R's diagonal made positive."""
    if dim < 2:
        raise ValueError("dim must be at least 2")
    g = (rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))) / np.sqrt(2)
    q, r = np.linalg.qr(g)
    d = np.diag(r)
    q = q * (d / np.abs(d))
    # one polish step keeps ||U^dag U - I|| at machine precision
    u, _, vh = np.linalg.svd(q)
    return u @ vh


@lru_cache(maxsize=None)
def _pauli_basis(k: int) -> tuple[np.ndarray, ...]:
    mats = []
    for word in itertools.product(LETTERS, repeat=k):
        m = kron_all(PAULI[c] for c in word)
        m.setflags(write=False)
        mats.append(m)
    return tuple(mats)


def pauli_labels(k: int) -> list[str]:
    return ["".join(w) for w in itertools.product(LETTERS, repeat=k)]


def pauli_basis(k: int) -> list[np.ndarray]:
    """All 4**k Pauli strings on k qubits, lexicographic with I < X < Y < Z."""
    if not 1 <= k <= 4:
        raise ValueError("k must be between 1 and 4")
    return list(_pauli_basis(k))


@lru_cache(maxsize=None)
def pauli_stack(k: int) -> np.ndarray:
    """Read-only array of shape (4**k, 2**k, 2**k) in ``pauli_basis`` order."""
    out = np.stack(_pauli_basis(k))
    out.setflags(write=False)
    return out


def pauli_matrix(word: str) -> np.ndarray:
    return kron_all(PAULI[c] for c in word)


class PSDProjectionError(ValueError):
    pass


def psd_project(rho_hat: np.ndarray, tol: Tolerances = TOL) -> np.ndarray:
    """Clip negative eigenvalues to zero and renormalize to unit trace."""
    rho_hat = _require_hermitian(rho_hat, tol.hermitian)
    w, v = np.linalg.eigh((rho_hat + rho_hat.conj().T) / 2)
    w = np.clip(w, 0.0, None)
    s = w.sum()
    if s <= 0:
        raise PSDProjectionError("no positive spectrum left after clipping")
    out = (v * (w / s)) @ v.conj().T
    return (out + out.conj().T) / 2


def is_unitary(u: np.ndarray, tol: float = TOL.unitary) -> bool:
    return unitarity_defect(u) <= tol


def unitarity_defect(u: np.ndarray) -> float:
    u = np.asarray(u)
    return float(np.max(np.abs(u.conj().T @ u - np.eye(u.shape[1]))))


def random_hermitian(dim: int, rng: np.random.Generator) -> np.ndarray:
    a = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    return (a + a.conj().T) / 2


def random_density(dim: int, rng: np.random.Generator, rank: int | None = None) -> np.ndarray:
    rank = dim if rank is None else rank
    a = rng.standard_normal((dim, rank)) + 1j * rng.standard_normal((dim, rank))
    rho = a @ a.conj().T
    return rho / np.trace(rho).real


def random_state(dim: int, rng: np.random.Generator) -> np.ndarray:
    v = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def embed_operator(op: np.ndarray, positions: Sequence[int], width: int) -> np.ndarray:
    """Place an operator on ``positions`` (0-based, kron order) of a ``width``-qubit register."""
    k = len(positions)
    t = np.asarray(op, dtype=complex).reshape((2,) * (2 * k))
    rest = [p for p in range(width) if p not in positions]
    full = np.tensordot(t, np.eye(2 ** len(rest)).reshape((2,) * (2 * len(rest))), axes=0) if rest else t
    # current axis order: out(positions), in(positions), out(rest), in(rest)
    out_axes = list(positions) + rest
    src_out = list(range(k)) + list(range(2 * k, 2 * k + len(rest)))
    src_in = list(range(k, 2 * k)) + list(range(2 * k + len(rest), 2 * k + 2 * len(rest)))
    perm = [0] * (2 * width)
    for src, dst in zip(src_out, out_axes):
        perm[dst] = src
    for src, dst in zip(src_in, out_axes):
        perm[width + dst] = src
    return np.transpose(full, perm).reshape(2**width, 2**width)
