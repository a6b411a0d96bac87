"""Learning without unitary control.

Instead of applying the learned gates to the system, Pauli strings
measured on the raw state are pushed up through the learned layers with
the ascending map ``A(O) = <0_anc| G O G^dag |0_anc>``, where ``G`` applies
a layer's undo gates (disentanglers, then isometries). If the learned
ancillas are disentangled, ``Tr[rho_tau A(O)] = Tr[rho_{tau-1} O]``, so a
set of ascended strings spanning a block's operator space determines the
renormalized block state from raw expectation values.

Sites are 1-based within their level; a layer acting on level ``l - 1``
has disentangler undo gates on ``(2j, 2j+1)`` and isometry undo gates on
``(2j-1, 2j)`` with the ancilla on the odd site. Level-``l`` site ``i`` is
the even site ``2i`` of level ``l - 1``.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import qr

from .circuit import Layer, MeraCircuit, layer_sizes, log2_size
from .numerics import partial_trace, pauli_matrix, psd_project
from .optimizer import ObjectiveSpec, cg_minimize, extract_isometry, extract_top, reduced_pair
from .learner import LearnOptions
from .statevector import PauliString, StateVector, fidelity, generate_state, pauli_expectation, sample_expectation

MAX_DENSE_WIDTH = 10
RANK_CUTOFF = 1e-8


class CapacityError(RuntimeError):
    pass


class RankDeficiencyError(RuntimeError):
    pass


@dataclass
class LayerGates:
    """Undo gates of one layer acting on ``m`` sites of its input level."""

    m: int
    disentanglers: list[np.ndarray]
    isometries: list[np.ndarray]

    @classmethod
    def from_layer(cls, layer: Layer) -> "LayerGates":
        m = 2 * len(layer.isometries)
        return cls(m, [g.conj().T for g in layer.disentanglers], [g.conj().T for g in layer.isometries])


# ---------------------------------------------------------------- support bookkeeping

def _lower(a: int, m: int) -> int:
    """Left end of the range touched when gates grow the support from site ``a``."""
    if a % 2 == 1 and a >= 3:
        a -= 1  # disentangler (a-1, a)
    if a % 2 == 0:
        a -= 1  # isometry (a-1, a)
    return a


def _upper(b: int, m: int) -> int:
    if b % 2 == 0 and b + 1 <= m - 1:
        b += 1  # disentangler (b, b+1)
    if b % 2 == 1:
        b += 1  # isometry (b, b+1)
    return b


def expanded_range(a: int, b: int, m: int) -> tuple[int, int]:
    """Sites touched by the layer's gates that overlap ``[a, b]``."""
    if not 1 <= a <= b <= m:
        raise ValueError(f"range [{a}, {b}] outside 1..{m}")
    return _lower(a, m), _upper(b, m)


def image_range(a: int, b: int, m: int) -> tuple[int, int]:
    """Output-level sites on which the ascended operator may act."""
    lo, hi = expanded_range(a, b, m)
    return (lo + 1) // 2, hi // 2


def causal_shadow(block: tuple[int, int], level: int, n: int) -> list[int]:
    """Raw sites whose operators can ascend to something non-trivial on ``block``."""
    p, q = block
    sizes = [n >> ell for ell in range(level + 1)]
    for ell in range(level, 0, -1):
        m = sizes[ell - 1]
        hits = [s for s in range(1, m + 1) if _overlaps(image_range(s, s, m), (p, q))]
        p, q = hits[0], hits[-1]
    return list(range(p, q + 1))


def _overlaps(r1: tuple[int, int], r2: tuple[int, int]) -> bool:
    return r1[0] <= r2[1] and r2[0] <= r1[1]


def _widths(a: int, b: int, level: int, n: int) -> tuple[int, tuple[int, int]]:
    """Largest dense width met while ascending ``[a, b]`` and the final image."""
    widest = 0
    for ell in range(1, level + 1):
        m = n >> (ell - 1)
        lo, hi = expanded_range(a, b, m)
        widest = max(widest, hi - lo + 1)
        a, b = (lo + 1) // 2, hi // 2
    return widest, (a, b)


# ---------------------------------------------------------------- ascending map

def _conj_gate(t: np.ndarray, g: np.ndarray, i: int, w: int) -> np.ndarray:
    """G O G^dag with G on positions (i, i+1) of a w-qubit operator tensor."""
    g4 = g.reshape(2, 2, 2, 2)
    t = np.tensordot(g4, t, axes=([2, 3], [i, i + 1]))
    t = np.moveaxis(t, [0, 1], [i, i + 1])
    t = np.tensordot(t, g4.conj(), axes=([w + i, w + i + 1], [2, 3]))
    return np.moveaxis(t, [2 * w - 2, 2 * w - 1], [w + i, w + i + 1])


def ascend_observable(op: np.ndarray, support: tuple[int, int], gates: LayerGates,
                      max_width: int = MAX_DENSE_WIDTH) -> tuple[np.ndarray, tuple[int, int]]:
    """Push an operator on the contiguous ``support`` through one layer."""
    a, b = support
    lo, hi = expanded_range(a, b, gates.m)
    w = hi - lo + 1
    if w > max_width:
        raise CapacityError(f"ascending needs a {w}-qubit dense operator; the limit is {max_width}")
    k = b - a + 1
    op = np.asarray(op, dtype=complex)
    if op.shape != (2**k, 2**k):
        raise ValueError(f"operator shape {op.shape} does not match support [{a}, {b}]")
    # embed with identities on [lo, a) and (b, hi]
    left, right = a - lo, hi - b
    full = np.kron(np.kron(np.eye(2**left), op), np.eye(2**right))
    t = full.reshape((2,) * (2 * w))
    for j, u in enumerate(gates.disentanglers, start=1):
        if lo <= 2 * j and 2 * j + 1 <= hi:
            t = _conj_gate(t, u, 2 * j - lo, w)
    for j, v in enumerate(gates.isometries, start=1):
        if lo <= 2 * j - 1 and 2 * j <= hi:
            t = _conj_gate(t, v, 2 * j - 1 - lo, w)
    # project every ancilla (odd site) onto |0><0|
    odd = [s - lo for s in range(lo, hi + 1) if s % 2 == 1]
    idx = [slice(None)] * (2 * w)
    for p in odd:
        idx[p] = 0
        idx[w + p] = 0
    t = t[tuple(idx)]
    d = 2 ** (w - len(odd))
    return t.reshape(d, d), ((lo + 1) // 2, hi // 2)


def ascend_through(op: np.ndarray, support: tuple[int, int], layers: list[LayerGates],
                   max_width: int = MAX_DENSE_WIDTH) -> tuple[np.ndarray, tuple[int, int]]:
    for gates in layers:
        op, support = ascend_observable(op, support, gates, max_width)
    return op, support


def _pad(op: np.ndarray, support: tuple[int, int], block: tuple[int, int]) -> np.ndarray:
    left, right = support[0] - block[0], block[1] - support[1]
    if left < 0 or right < 0:
        raise ValueError(f"support {support} is not inside block {block}")
    return np.kron(np.kron(np.eye(2**left), op), np.eye(2**right))


# ---------------------------------------------------------------- observable sets

@dataclass
class AscendedObservableSet:
    block: tuple[int, int]
    level: int
    candidates: list[tuple[PauliString, np.ndarray]]
    gram_eigenvalues: np.ndarray
    mixing: np.ndarray  # row i holds Z_ij
    conditioning: np.ndarray
    examined: int = 0

    @property
    def dim(self) -> int:
        return 2 ** (self.block[1] - self.block[0] + 1)

    def gram(self) -> np.ndarray:
        ops = np.stack([o for _, o in self.candidates]).reshape(len(self.candidates), -1)
        return (ops @ ops.conj().T) / self.dim

    def orthonormal(self) -> np.ndarray:
        """R_i = lambda_i^{-1/2} sum_j Z_ij O_j, stacked."""
        ops = np.stack([o for _, o in self.candidates])
        coeff = self.mixing / np.sqrt(self.gram_eigenvalues)[:, None]
        return np.tensordot(coeff, ops, axes=1)

    def report(self) -> dict:
        return {"block": list(self.block), "level": self.level, "observables": len(self.candidates),
                "gram_eigenvalues": self.gram_eigenvalues.tolist(),
                "conditioning": self.conditioning.tolist()}


def _pauli_words(lo: int, hi: int, max_weight: int) -> list[PauliString]:
    sites = list(range(lo, hi + 1))
    words = []
    for w in range(1, max_weight + 1):
        for pos in itertools.combinations(sites, w):
            for letters in itertools.product("XYZ", repeat=w):
                words.append(PauliString(pos, "".join(letters)))
    return words


def _pauli_op(p: PauliString) -> tuple[np.ndarray, tuple[int, int]]:
    """Dense operator of a string on the span of its non-identity sites."""
    active = [(s, c) for s, c in zip(p.sites, p.letters) if c != "I"]
    if not active:
        return np.eye(2, dtype=complex), (p.sites[0], p.sites[0]) if p.sites else (1, 1)
    lo, hi = active[0][0], active[-1][0]
    letters = dict(active)
    return pauli_matrix("".join(letters.get(s, "I") for s in range(lo, hi + 1))), (lo, hi)


def _trim(op: np.ndarray, support: tuple[int, int], tol: float = 1e-12) -> tuple[np.ndarray, tuple[int, int]]:
    """Drop edge sites on which ``op`` acts as the identity."""
    lo, hi = support
    while hi > lo:
        d = op.shape[0] // 2
        t = op.reshape(2, d, 2, d)
        if np.abs(t[0, :, 1, :]).max() <= tol and np.abs(t[1, :, 0, :]).max() <= tol \
                and np.abs(t[0, :, 0, :] - t[1, :, 1, :]).max() <= tol:
            op, lo = t[0, :, 0, :], lo + 1
            continue
        t = op.reshape(d, 2, d, 2)
        if np.abs(t[:, 0, :, 1]).max() <= tol and np.abs(t[:, 1, :, 0]).max() <= tol \
                and np.abs(t[:, 0, :, 0] - t[:, 1, :, 1]).max() <= tol:
            op, hi = t[:, 0, :, 0], hi - 1
            continue
        break
    return op, (lo, hi)


def candidate_domain(block: tuple[int, int], level: int, n: int,
                     max_width: int = MAX_DENSE_WIDTH) -> tuple[int, int]:
    """Raw range used for candidate strings: the causal shadow, narrowed to the dense capacity."""
    shadow = causal_shadow(block, level, n)
    a, b = shadow[0], shadow[-1]
    if level == 0 or _widths(a, b, level, n)[0] <= max_width:
        return a, b
    best = None
    for lo in range(a, b + 1):
        for hi in range(lo, b + 1):
            width, image = _widths(lo, hi, level, n)
            covers = image[0] <= block[0] and block[1] <= image[1]
            if width <= max_width and covers and (best is None or hi - lo > best[1] - best[0]):
                best = (lo, hi)
    if best is None:
        raise CapacityError(f"block {block} at level {level} needs dense operators wider than "
                            f"{max_width} qubits")
    return best


def build_observable_set(block: tuple[int, int], level: int, layers: list[LayerGates], n: int,
                         rng: np.random.Generator | None = None, target_rank: int | None = None,
                         max_weight: int = 4, budget: int | None = None, cutoff: float = RANK_CUTOFF,
                         candidates: list[PauliString] | None = None,
                         max_width: int = MAX_DENSE_WIDTH) -> AscendedObservableSet:
    """Choose ascended Pauli strings spanning the block's operator space.

    Strings on the candidate domain with at most ``max_weight``
    non-identity sites are drawn in random order and ascended; those
    landing inside the block join a pool. The identity string is always
    kept, and column-pivoted QR picks the best-conditioned remainder once
    the pool reaches ``target_rank``.
    """
    block = (int(block[0]), int(block[1]))
    k = block[1] - block[0] + 1
    d = 2**k
    target_rank = d * d if target_rank is None else target_rank
    layers = layers[:level]
    if len(layers) != level:
        raise ValueError(f"need {level} learned layers, got {len(layers)}")
    if candidates is None:
        lo, hi = candidate_domain(block, level, n, max_width)
        pool = _pauli_words(lo, hi, min(max_weight, hi - lo + 1))
        order = (rng if rng is not None else np.random.default_rng(0)).permutation(len(pool))
        candidates = [pool[i] for i in order]
    else:
        candidates = [p for p in candidates if p.weight > 0]
    if budget is not None:
        candidates = candidates[:budget]
    identity = np.eye(d, dtype=complex)
    strings: list[PauliString] = []
    ops: list[np.ndarray] = []
    chunk = 4 * target_rank
    examined = 0
    chosen = None
    for start in range(0, max(len(candidates), 1), chunk):
        for p in candidates[start:start + chunk]:
            examined += 1
            op, support = _pauli_op(p)
            asc, sup = _trim(*ascend_through(op, support, layers, max_width))
            if block[0] <= sup[0] and sup[1] <= block[1]:
                strings.append(p)
                ops.append(_pad(asc, sup, block))
        chosen = _select(identity, ops, target_rank, cutoff)
        if chosen is not None:
            break
    if chosen is None:
        found = 1 + (_rank(identity, ops, cutoff) if ops else 0)
        raise RankDeficiencyError(f"block {block} at level {level}: rank {found} of {target_rank} "
                                  f"after {examined} candidates")
    kept = [(PauliString((block[0],), "I"), identity)] + [(strings[i], ops[i]) for i in chosen]
    mat = np.stack([o for _, o in kept]).reshape(len(kept), -1)
    gram = ((mat @ mat.conj().T) / d).real
    w, v = np.linalg.eigh((gram + gram.T) / 2)
    w, v = w[::-1], v[:, ::-1]
    if w[-1] <= cutoff:
        raise RankDeficiencyError(f"block {block} at level {level}: Gram eigenvalue {w[-1]:.2e} below cutoff")
    return AscendedObservableSet(block, level, kept, w, v.T.copy(), 1.0 / w, examined)


def _deflated(identity: np.ndarray, ops: list[np.ndarray]) -> np.ndarray:
    """Pool operators as columns with their identity component removed."""
    d = identity.shape[0]
    cols = np.stack(ops).reshape(len(ops), -1).T / math.sqrt(d)
    e = identity.reshape(-1) / math.sqrt(d)
    return cols - np.outer(e, e.conj() @ cols)


def _rank(identity: np.ndarray, ops: list[np.ndarray], cutoff: float) -> int:
    s = np.linalg.svd(_deflated(identity, ops), compute_uv=False)
    return int(np.sum(s**2 > cutoff))


def _select(identity: np.ndarray, ops: list[np.ndarray], target_rank: int, cutoff: float) -> list[int] | None:
    need = target_rank - 1
    if need == 0:
        return []
    if len(ops) < need:
        return None
    _, r, piv = qr(_deflated(identity, ops), mode="economic", pivoting=True)
    if r.shape[0] < need or abs(r[need - 1, need - 1]) ** 2 <= cutoff:
        return None
    return sorted(int(i) for i in piv[:need])


# ---------------------------------------------------------------- estimation

@dataclass
class IndirectEstimate:
    rho: np.ndarray
    rho_raw: np.ndarray
    expectations: np.ndarray
    coefficients: np.ndarray
    amplification: np.ndarray


def estimate_block_indirect(state: StateVector, obs: AscendedObservableSet, mode: str = "exact",
                            shots: int = 1000, rng: np.random.Generator | None = None) -> IndirectEstimate:
    """Renormalized block state from raw Pauli expectation values."""
    o = np.empty(len(obs.candidates))
    for j, (p, _) in enumerate(obs.candidates):
        if p.weight == 0:
            o[j] = 1.0
        elif mode == "exact":
            o[j] = pauli_expectation(state, p)
        elif mode == "sampled":
            rng = rng if rng is not None else np.random.default_rng()
            o[j] = sample_expectation(state, p, shots, rng)
        else:
            raise ValueError(f"unknown mode {mode!r}")
    scale = 1.0 / np.sqrt(obs.gram_eigenvalues)
    r = scale * (obs.mixing @ o)
    raw = np.tensordot(r, obs.orthonormal(), axes=1) / obs.dim
    raw = (raw + raw.conj().T) / 2
    amp = (scale**2) * np.sum(obs.mixing**2, axis=1)
    return IndirectEstimate(psd_project(raw), raw, o, r, amp)


def conditioning_overhead(obs: AscendedObservableSet, target_variance: float | None = None) -> dict:
    """Shot multipliers lambda_i^{-1}; optionally the shots per observable for a variance target."""
    mult = obs.conditioning.copy()
    out = {"multipliers": mult.tolist(), "worst": float(mult.max())}
    if target_variance is not None:
        out["shots_per_observable"] = int(math.ceil(mult.max() / target_variance))
    return out


def total_multiplier(per_layer_worst: list[float]) -> float:
    """Worst-case shot multiplier of a full run: product of per-layer worst factors."""
    return float(np.prod(per_layer_worst)) if per_layer_worst else 1.0


# ---------------------------------------------------------------- learning

@dataclass
class IndirectDiagnostics:
    layers_learned: int
    conditioning: list[dict] = field(default_factory=list)
    per_layer_worst: list[float] = field(default_factory=list)
    observables_measured: int = 0
    oracle_infidelity: float | None = None

    @property
    def worst_case_multiplier(self) -> float:
        return total_multiplier(self.per_layer_worst)

    def to_dict(self) -> dict:
        return {"format_version": 1, "layers_learned": self.layers_learned,
                "observables_measured": self.observables_measured,
                "oracle_infidelity": self.oracle_infidelity,
                "per_layer_worst": self.per_layer_worst,
                "worst_case_multiplier": self.worst_case_multiplier,
                "conditioning": self.conditioning}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


class IndirectLearningError(RuntimeError):
    def __init__(self, message: str, layer: int, block: tuple[int, int]):
        super().__init__(f"layer {layer}, block {block}: {message}")
        self.layer = layer
        self.block = block


def _apply_pair(rho: np.ndarray, u: np.ndarray, pos: int, k: int) -> np.ndarray:
    g = np.kron(np.kron(np.eye(2**pos), u), np.eye(2 ** (k - pos - 2)))
    return g @ rho @ g.conj().T


def _trace_site(rho: np.ndarray, k: int, drop: int) -> np.ndarray:
    """Trace the 0-based position ``drop`` of a k-qubit block."""
    return partial_trace(rho, k, [i + 1 for i in range(k) if i != drop])


class _BlockSource:
    """Raw-range density matrices at one level, with cached observable sets."""

    def __init__(self, state, level, layers, n, opts: LearnOptions, rng, diag: IndirectDiagnostics, tau):
        self.state, self.level, self.layers, self.n = state, level, layers, n
        self.opts, self.rng, self.diag, self.tau = opts, rng, diag, tau
        self.sets: dict[tuple[int, int], AscendedObservableSet] = {}

    def __call__(self, lo: int, hi: int) -> np.ndarray:
        key = (lo, hi)
        try:
            if key not in self.sets:
                self.sets[key] = build_observable_set(key, self.level, self.layers, self.n, self.rng)
                s = self.sets[key]
                self.diag.conditioning.append({"layer": self.tau, **s.report()})
            est = estimate_block_indirect(self.state, self.sets[key], self.opts.tomography, self.opts.shots, self.rng)
        except (CapacityError, RankDeficiencyError) as exc:
            raise IndirectLearningError(str(exc), self.tau, key) from None
        self.diag.observables_measured += len(self.sets[key].candidates) - 1
        return est.rho


def _indirect_pass(src: _BlockSource, m: int, direction: str, init, opts: LearnOptions, rng):
    nd = m // 2 - 1
    dis: list = [None] * nd
    iso: list = [None] * (m // 2)
    if direction == "LR":
        for k in range(1, nd + 1):
            if k > 1:
                rho = _trace_site(_apply_pair(src(2 * k - 2, 2 * k + 1), dis[k - 2], 0, 4), 4, 0)
            else:
                rho = src(1, 3)
            u, _, _ = cg_minimize(rho, ObjectiveSpec("rank_tail", "right"), opts.optimizer,
                                  init[k - 1] if init else None, rng)
            dis[k - 1] = u
            iso[k - 1] = extract_isometry(reduced_pair(u, rho, "right"))
        pair = _trace_site(_apply_pair(src(m - 2, m), dis[-1], 0, 3), 3, 0)
        iso[-1] = extract_isometry(pair)
    else:
        for k in range(nd, 0, -1):
            if k < nd:
                rho = _trace_site(_apply_pair(src(2 * k, 2 * k + 3), dis[k], 2, 4), 4, 3)
            else:
                rho = src(2 * k, 2 * k + 2)
            u, _, _ = cg_minimize(rho, ObjectiveSpec("rank_tail", "left"), opts.optimizer,
                                  init[k - 1] if init else None, rng)
            dis[k - 1] = u
            iso[k] = extract_isometry(reduced_pair(u, rho, "left"))
        pair = _trace_site(_apply_pair(src(1, 3), dis[0], 1, 3), 3, 2)
        iso[0] = extract_isometry(pair)
    return dis, iso


def _worst(diag: IndirectDiagnostics, tau: int) -> float:
    return max(max(c["conditioning"]) for c in diag.conditioning if c["layer"] == tau)


def learn_mera_indirect(state: StateVector, sweeps: int | None = None, opts: LearnOptions = LearnOptions(),
                        rng: np.random.Generator | None = None,
                        max_layers: int | None = None) -> tuple[MeraCircuit | None, IndirectDiagnostics]:
    """Same block and sweep schedule as the controlled learner, fed by ascended measurements.

    The state is never modified. With ``max_layers`` below the circuit
    depth only the lowest layers are learned and no circuit is returned.
    """
    sweeps = opts.sweeps if sweeps is None else sweeps
    if sweeps < 1:
        raise ValueError("sweeps must be >= 1")
    rng = rng if rng is not None else np.random.default_rng(opts.seed)
    n = state.n
    log2_size(n)
    sizes = layer_sizes(n)
    depth = len(sizes)
    stop = depth if max_layers is None else min(max_layers, depth)
    diag = IndirectDiagnostics(0)
    learned: list[LayerGates] = []
    for tau in range(1, stop + 1):
        m = sizes[tau - 1]
        src = _BlockSource(state, tau - 1, learned, n, opts, rng, diag, tau)
        init = None
        for s in range(sweeps):
            dis, iso = _indirect_pass(src, m, "LR" if s % 2 == 0 else "RL", init, opts, rng)
            init = dis
        learned.append(LayerGates(m, dis, iso))
        diag.per_layer_worst.append(_worst(diag, tau))
        diag.layers_learned = tau
    if stop < depth:
        return None, diag
    src = _BlockSource(state, depth, learned, n, opts, rng, diag, depth + 1)
    top = extract_top(src(1, 2))
    diag.per_layer_worst.append(_worst(diag, depth + 1))
    circuit = MeraCircuit(n, [Layer([u.conj().T for u in g.disentanglers], [v.conj().T for v in g.isometries])
                              for g in learned], top.conj().T)
    diag.oracle_infidelity = 1.0 - fidelity(generate_state(circuit), state)
    return circuit, diag

