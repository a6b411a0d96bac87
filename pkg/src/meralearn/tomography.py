"""Brute-force tomography on blocks of 2 to 4 qubits.

Every setting measures each block qubit in the X, Y or Z basis. A Pauli
string is read off the first setting (lexicographic in XYZ) that agrees
with it on its non-identity sites, by multiplying the +/-1 outcomes of
those sites.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .circuit import layer_sizes
from .numerics import kron_all, pauli_labels, pauli_stack, psd_project
from .statevector import MAX_BLOCK, StateVector, reduced_density

# rotations taking the measured basis onto the computational basis
_BASIS_CHANGE = {
    "X": np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2),
    "Y": np.array([[1, -1j], [1, 1j]], dtype=complex) / np.sqrt(2),
    "Z": np.eye(2, dtype=complex),
}
SETTINGS_PER_3Q_BLOCK = 27


@dataclass
class TomographyEstimate:
    sites: list[int]
    records: dict[str, tuple[float, int]]
    rho_hat: np.ndarray
    mode: str
    rho_raw: np.ndarray | None = None

    def to_dict(self) -> dict:
        return {
            "format_version": 1,
            "sites": list(self.sites),
            "mode": self.mode,
            "records": {k: {"estimate": v[0], "shots": v[1]} for k, v in self.records.items()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def settings_for_block(sites: Sequence[int]) -> list[str]:
    k = len(sites)
    if not 2 <= k <= MAX_BLOCK:
        raise ValueError(f"block size must be 2..{MAX_BLOCK}, got {k}")
    return ["".join(s) for s in itertools.product("XYZ", repeat=k)]


def first_setting(word: str) -> str:
    """Lexicographically first local-basis setting able to measure ``word``."""
    return word.replace("I", "X")


def linear_inversion(expectations: dict[str, float], k: int) -> np.ndarray:
    """rho = 2**-k * sum_P <P> P with <I...I> fixed to 1."""
    labels = pauli_labels(k)
    coeffs = np.array([1.0] + [expectations[w] for w in labels[1:]])
    return np.tensordot(coeffs, pauli_stack(k), axes=1) / 2**k


def _sample_setting(rho: np.ndarray, setting: str, shots: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``shots`` joint outcomes; returns an array of +/-1 of shape (shots, k)."""
    k = len(setting)
    r = kron_all(_BASIS_CHANGE[c] for c in setting)
    probs = np.clip(np.real(np.diag(r @ rho @ r.conj().T)), 0, None)
    probs = probs / probs.sum()
    counts = rng.multinomial(shots, probs)
    idx = np.repeat(np.arange(2**k), counts)
    bits = (idx[:, None] >> np.arange(k - 1, -1, -1)) & 1
    return 1 - 2 * bits


def estimate_block(state: StateVector, sites: Sequence[int], mode: str = "exact",
                   shots_per_setting: int = 1000, rng: np.random.Generator | None = None) -> TomographyEstimate:
    """Reconstruct the block density matrix from exact or shot-sampled Pauli data."""
    sites = list(sites)
    settings_for_block(sites)
    rho_true = reduced_density(state, sites)
    return estimate_from_density(rho_true, sites, mode, shots_per_setting, rng)


def estimate_from_density(rho_true: np.ndarray, sites: Sequence[int], mode: str = "exact",
                          shots_per_setting: int = 1000,
                          rng: np.random.Generator | None = None) -> TomographyEstimate:
    sites = list(sites)
    k = len(sites)
    words = [w for w in pauli_labels(k) if set(w) != {"I"}]
    records: dict[str, tuple[float, int]] = {}
    if mode == "exact":
        vals = np.einsum("kij,ji->k", pauli_stack(k), rho_true).real
        for w, v in zip(words, vals[1:]):
            records[w] = (float(v), 0)
    elif mode == "sampled":
        if shots_per_setting < 1:
            raise ValueError("shots_per_setting must be >= 1")
        rng = rng if rng is not None else np.random.default_rng()
        outcomes = {s: _sample_setting(rho_true, s, shots_per_setting, rng) for s in settings_for_block(sites)}
        for w in words:
            data = outcomes[first_setting(w)]
            mask = np.array([c != "I" for c in w])
            records[w] = (float(np.mean(np.prod(data[:, mask], axis=1))), shots_per_setting)
    else:
        raise ValueError(f"unknown tomography mode {mode!r}")
    raw = linear_inversion({w: v for w, (v, _) in records.items()}, k)
    rho_hat = raw if mode == "exact" else psd_project(raw)
    return TomographyEstimate(sites, records, rho_hat, mode, raw)


def blocks_per_sweep(n: int) -> int:
    """Three-qubit tomography blocks visited by one sweep over every layer."""
    return sum(m // 2 - 1 for m in layer_sizes(n))


def setting_count(n: int, sweeps: int = 1, include_pairs: bool = False) -> int:
    """Measurement settings used by a learning run.

    Counts 27 settings per three-qubit block per sweep. With
    ``include_pairs`` the two-qubit tomographies (last isometry of each
    layer, and the top) add 9 settings each.
    """
    if sweeps < 1:
        raise ValueError("sweeps must be >= 1")
    total = SETTINGS_PER_3Q_BLOCK * blocks_per_sweep(n) * sweeps
    if include_pairs:
        total += 9 * len(layer_sizes(n)) * sweeps + 9
    return total
