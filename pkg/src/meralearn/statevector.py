"""Statevector engine standing in for the laboratory.

Amplitudes are little-endian: site 1 is the least significant bit of the
basis index. Internally the vector is viewed as a tensor of shape
``(2,) * n`` whose axis ``n - s`` belongs to site ``s``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .circuit import MeraCircuit
from .numerics import PAULI, TOL

MAX_QUBITS = 26
MAX_BLOCK = 4


class PostSelectionError(RuntimeError):
    pass


@dataclass(frozen=True)
class PauliString:
    sites: tuple[int, ...]
    letters: str

    def __post_init__(self):
        if len(self.sites) != len(self.letters):
            raise ValueError("sites and letters differ in length")
        if any(b <= a for a, b in zip(self.sites, self.sites[1:])):
            raise ValueError("sites must be strictly increasing")
        if any(c not in "IXYZ" for c in self.letters):
            raise ValueError(f"bad Pauli letters {self.letters!r}")

    @property
    def weight(self) -> int:
        return sum(c != "I" for c in self.letters)

    def __str__(self) -> str:
        return " ".join(f"{c}{s}" for s, c in zip(self.sites, self.letters) if c != "I") or "I"


@dataclass(frozen=True)
class StateVector:
    n: int
    amplitudes: np.ndarray

    def tensor(self) -> np.ndarray:
        return self.amplitudes.reshape((2,) * self.n)

    @classmethod
    def from_tensor(cls, t: np.ndarray) -> "StateVector":
        return cls(t.ndim, t.reshape(-1))

    @classmethod
    def zeros(cls, n: int) -> "StateVector":
        if not 1 <= n <= MAX_QUBITS:
            raise ValueError(f"n must be in 1..{MAX_QUBITS}")
        a = np.zeros(2**n, dtype=complex)
        a[0] = 1.0
        return cls(n, a)

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))


def _axis(n: int, site: int) -> int:
    if not 1 <= site <= n:
        raise ValueError(f"site {site} out of range 1..{n}")
    return n - site


def apply_two_qubit(state: StateVector, u: np.ndarray, sites: tuple[int, int]) -> StateVector:
    """Apply a 4x4 gate whose first tensor factor acts on ``sites[0]``."""
    i, j = sites
    if i == j:
        raise ValueError("gate sites must differ")
    ai, aj = _axis(state.n, i), _axis(state.n, j)
    t = np.tensordot(np.asarray(u).reshape(2, 2, 2, 2), state.tensor(), axes=([2, 3], [ai, aj]))
    t = np.moveaxis(t, [0, 1], [ai, aj])
    return StateVector.from_tensor(np.ascontiguousarray(t))


def apply_one_qubit(state: StateVector, op: np.ndarray, site: int) -> StateVector:
    a = _axis(state.n, site)
    t = np.tensordot(np.asarray(op), state.tensor(), axes=([1], [a]))
    return StateVector.from_tensor(np.ascontiguousarray(np.moveaxis(t, 0, a)))


def generate_state(circuit: MeraCircuit) -> StateVector:
    """Run the MERA circuit from |0...0> (top tensor first, then layers downward)."""
    n = circuit.n
    if n > MAX_QUBITS:
        raise ValueError(f"n = {n} exceeds the simulator limit of {MAX_QUBITS}")
    psi = StateVector.zeros(n)
    gates = list(circuit.gates())
    psi = apply_two_qubit(psi, gates[-1].matrix, gates[-1].sites(n))
    for tau in range(circuit.depth, 0, -1):
        layer = [g for g in gates if g.layer == tau]
        for g in layer:
            if g.kind == "isometry":
                psi = apply_two_qubit(psi, g.matrix, g.sites(n))
        for g in layer:
            if g.kind == "disentangler":
                psi = apply_two_qubit(psi, g.matrix, g.sites(n))
    return psi


def reduced_density(state: StateVector, sites: Sequence[int], max_block: int = MAX_BLOCK) -> np.ndarray:
    """Reduced density matrix on ``sites`` in kron order of the given list."""
    sites = list(sites)
    if len(sites) > max_block:
        raise ValueError(f"block of {len(sites)} sites exceeds the tomography limit {max_block}")
    if len(set(sites)) != len(sites) or not sites:
        raise ValueError("sites must be distinct and non-empty")
    axes = [_axis(state.n, s) for s in sites]
    t = np.moveaxis(state.tensor(), axes, list(range(len(axes))))
    m = t.reshape(2 ** len(sites), -1)
    rho = m @ m.conj().T
    return (rho + rho.conj().T) / 2


def measure_postselect_zero(state: StateVector, site: int,
                            min_prob: float = TOL.postselect_min) -> tuple[StateVector, float]:
    """Project ``site`` onto |0>, renormalize, and return the acceptance probability."""
    a = _axis(state.n, site)
    t = state.tensor().copy()
    idx = [slice(None)] * state.n
    idx[a] = 1
    p1 = float(np.vdot(t[tuple(idx)], t[tuple(idx)]).real)
    t[tuple(idx)] = 0.0
    p0 = float(np.vdot(t, t).real)
    total = p0 + p1
    p = p0 / total
    if p < min_prob:
        raise PostSelectionError(f"site {site} has no |0> component (p = {p:.3e})")
    return StateVector.from_tensor(t / np.sqrt(p0)), p


def apply_pauli(state: StateVector, p: PauliString) -> StateVector:
    out = state
    for s, c in zip(p.sites, p.letters):
        if c != "I":
            out = apply_one_qubit(out, PAULI[c], s)
    return out


def pauli_expectation(state: StateVector, p: PauliString) -> float:
    val = np.vdot(state.amplitudes, apply_pauli(state, p).amplitudes).real
    return float(np.clip(val, -1.0, 1.0))


def sample_expectation(state: StateVector, p: PauliString, shots: int, rng: np.random.Generator) -> float:
    """Mean of ``shots`` +/-1 outcomes drawn from the exact eigenvalue distribution."""
    if shots < 1:
        raise ValueError("shots must be >= 1")
    exact = pauli_expectation(state, p)
    plus = rng.binomial(shots, (1.0 + exact) / 2.0)
    return (2.0 * plus - shots) / shots


def fidelity(a: StateVector, b: StateVector) -> float:
    return float(abs(np.vdot(a.amplitudes, b.amplitudes)) ** 2)
