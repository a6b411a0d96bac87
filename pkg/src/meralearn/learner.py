"""MERA reconstruction with unitary control and post-selected ancillas.

The learner undoes the circuit layer by layer on the full register. For
layer ``tau`` the level-``tau - 1`` site ``i`` is physical qubit
``i * 2**(tau - 1)``. A left-to-right pass visits blocks ``(2k-1, 2k, 2k+1)``:
the disentangler undo ``U`` acts on ``(2k, 2k+1)``, the isometry undo ``V``
on ``(2k-1, 2k)`` and qubit ``2k-1`` is measured and post-selected on
``|0>``. A right-to-left pass mirrors this with blocks ``(2k, 2k+1, 2k+2)``.
The learned circuit stores the adjoints of the undo gates.

Each post-selection is one certification step. Its residual
``epsilon = (1 - p) / p`` makes ``1 / (1 + epsilon)`` the acceptance
probability ``p``, so the certified infidelity ``1 - 1 / prod(1 + epsilon)``
equals ``1 - prod(p)``.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .circuit import Layer, MeraCircuit, layer_sizes, log2_size
from .numerics import random_hermitian
from .optimizer import (
    ObjectiveSpec, OptimizerOptions, cg_minimize, evaluate, extract_isometry, extract_top, reduced_pair,
)
from .statevector import (
    PostSelectionError, StateVector, apply_two_qubit, fidelity, generate_state, measure_postselect_zero,
    reduced_density,
)
from .tomography import estimate_block

log = logging.getLogger(__name__)


class LearningError(RuntimeError):
    def __init__(self, message: str, layer: int, block: int):
        super().__init__(f"layer {layer}, block {block}: {message}")
        self.layer = layer
        self.block = block


@dataclass
class StepRecord:
    layer: int
    block: int
    epsilon_step: float
    objective: float
    p_accept: float
    direction: str
    ancilla: int
    optimizer_failed: bool = False
    p_estimate: float | None = None


@dataclass
class CertificationReport:
    steps: list[StepRecord]
    epsilon_cm: list[float]
    infidelity_bound: float
    sweeps_used: int
    recommendations: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "format_version": 1,
            "sweeps_used": self.sweeps_used,
            "infidelity_bound": self.infidelity_bound,
            "epsilon_cm": self.epsilon_cm,
            "steps": [asdict(s) for s in self.steps],
            "recommendations": self.recommendations,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


@dataclass(frozen=True)
class Injection:
    """Deliberate per-step error for error-propagation studies.

    The first ``steps`` committed post-selection steps get an extra error
    that leaves the ancilla in ``|1>`` with probability
    ``epsilon / (1 + epsilon)`` on top of the learned residual.

    ``kind="entangling"`` applies ``exp(-i theta Y_anc P_keep)`` after the
    isometry, with ``P`` a random Pauli on the kept qubit: the ``|0>``
    branch is untouched, so post-selection removes the error, while the
    ``|1>`` branch stays correlated with the rest of the register.
    ``kind="ancilla"`` rotates the ancilla alone. ``kind="generic"``
    multiplies the learned disentangler (or, for steps without one, the
    isometry) by ``exp(-i delta H)`` with a random two-qubit ``H``.
    """

    epsilon: float
    steps: int
    kind: str = "entangling"
    seed: int = 0


@dataclass(frozen=True)
class LearnOptions:
    sweeps: int = 3
    tomography: str = "exact"
    shots: int = 1000
    objective: str = "rank_tail"
    epsilon_weight: float = 0.0
    optimizer: OptimizerOptions = OptimizerOptions()
    seed: int = 0
    postselect: bool = True
    chi_recommend_threshold: float = 1e-4
    injection: Injection | None = None


@dataclass
class LayerResult:
    disentanglers: list[np.ndarray]  # undo gates U_j
    isometries: list[np.ndarray]  # undo gates V_j
    records: list[StepRecord]
    state: StateVector


# ---------------------------------------------------------------- certification

def cumulative_epsilon(eps: list[float]) -> list[float]:
    out, prod = [], 1.0
    for e in eps:
        prod *= 1.0 + e
        out.append(prod - 1.0)
    return out


def infidelity_bound(eps: list[float]) -> float:
    return 1.0 - math.exp(-sum(math.log1p(e) for e in eps))


def required_step_precision(target: float, m: int) -> float:
    """Largest uniform per-step residual keeping the certified infidelity below ``target``."""
    if not 0 < target < 1 or m < 1:
        raise ValueError("need 0 < target < 1 and m >= 1")
    return math.expm1(-math.log1p(-target) / m)


def certify(report: CertificationReport, target: float | None = None, m: int | None = None) -> dict:
    eps = [s.epsilon_step for s in report.steps]
    out = {"infidelity_bound": infidelity_bound(eps), "epsilon_cm": cumulative_epsilon(eps)}
    if target is not None:
        m = len(eps) if m is None else m
        out["required_step_precision"] = required_step_precision(target, m)
        out["within_budget"] = all(e <= out["required_step_precision"] for e in eps)
    return out


def make_report(records: list[StepRecord], sweeps: int, threshold: float) -> CertificationReport:
    eps = [r.epsilon_step for r in records]
    recs = [f"step at layer {r.layer}, block {r.block} has epsilon {r.epsilon_step:.2e}; "
            f"a larger refinement parameter may be needed there"
            for r in records if r.epsilon_step > threshold]
    return CertificationReport(records, cumulative_epsilon(eps), infidelity_bound(eps), sweeps, recs)


# ---------------------------------------------------------------- injection

def _ancilla_rotation(epsilon: float) -> np.ndarray:
    theta = math.asin(math.sqrt(epsilon / (1.0 + epsilon)))
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]], dtype=complex)


_PAULIS = (np.array([[0, 1], [1, 0]], dtype=complex), np.array([[0, -1j], [1j, 0]]),
           np.array([[1, 0], [0, -1]], dtype=complex))


def _flip_error(epsilon: float, pauli: np.ndarray) -> np.ndarray:
    theta = math.asin(math.sqrt(epsilon / (1.0 + epsilon)))
    y = _PAULIS[1]
    return math.cos(theta) * np.eye(4) - 1j * math.sin(theta) * np.kron(y, pauli)


def _local_error(ctx: "_Context") -> np.ndarray:
    inj = ctx.opts.injection
    if inj.kind == "ancilla":
        return np.kron(_ancilla_rotation(inj.epsilon), np.eye(2))
    return _flip_error(inj.epsilon, _PAULIS[ctx.inj_rng.integers(3)])


def _random_generator(rng: np.random.Generator) -> np.ndarray:
    h = random_hermitian(4, rng)
    h -= np.trace(h) / 4 * np.eye(4)
    return h / np.linalg.norm(h)


def _exp_herm(h: np.ndarray, delta: float) -> np.ndarray:
    w, v = np.linalg.eigh(h)
    return (v * np.exp(-1j * delta * w)) @ v.conj().T


def _calibrate(func, target: float) -> float:
    """Smallest delta > 0 (on a scan then bisection) with ``func(delta) >= target``."""
    lo, flo = 0.0, func(0.0)
    if flo >= target:
        return 0.0
    step = 1e-3
    while True:
        hi = lo + step
        fhi = func(hi)
        if fhi >= target:
            break
        lo, flo = hi, fhi
        step *= 1.5
        if hi > math.pi:
            raise RuntimeError("could not calibrate the injected error")
    for _ in range(80):
        mid = (lo + hi) / 2
        if func(mid) >= target:
            hi = mid
        else:
            lo = mid
    return hi


def _ancilla_one_prob(pair_after_v: np.ndarray) -> float:
    return float(np.real(pair_after_v[2, 2] + pair_after_v[3, 3]))


# ---------------------------------------------------------------- layer learning

class _Context:
    def __init__(self, opts: LearnOptions, rng: np.random.Generator):
        self.opts = opts
        self.rng = rng
        self.inj_rng = np.random.default_rng(opts.injection.seed) if opts.injection else None
        self.step_index = 0

    def tomography(self, state: StateVector, sites: list[int]) -> np.ndarray:
        o = self.opts
        return estimate_block(state, sites, o.tomography, o.shots, self.rng).rho_hat

    def wants_injection(self, committed: bool) -> bool:
        inj = self.opts.injection
        return committed and inj is not None and self.step_index < inj.steps

    def spec(self, side: str) -> ObjectiveSpec:
        o = self.opts
        kind = "modified" if o.objective == "modified" and o.epsilon_weight > 0 else o.objective
        return ObjectiveSpec(kind, side, o.epsilon_weight if kind == "modified" else 0.0)


def _postselect(ctx: _Context, state: StateVector, site: int, layer: int, block: int) -> tuple[StateVector, float]:
    if ctx.opts.postselect:
        try:
            return measure_postselect_zero(state, site)
        except PostSelectionError as exc:
            raise LearningError(str(exc), layer, block) from None
    rho = reduced_density(state, [site])
    return state, float(np.real(rho[0, 0]))


def _record(ctx: _Context, layer: int, block: int, objective: float, p: float, direction: str,
            ancilla: int, failed: bool, committed: bool) -> StepRecord:
    p_est = None
    if ctx.opts.tomography == "sampled":
        p_est = ctx.rng.binomial(ctx.opts.shots, min(max(p, 0.0), 1.0)) / ctx.opts.shots
    eps = (1.0 - p) / p if p > 0 else math.inf
    if committed:
        ctx.step_index += 1
    return StepRecord(layer, block, max(eps, 0.0), objective, p, direction, ancilla, failed, p_est)


def _block_step(ctx: _Context, rho123: np.ndarray, side: str, init, committed: bool):
    """Find U, V for one block; returns (U, V, objective, failed)."""
    spec = ctx.spec(side)
    u, f, trace = cg_minimize(rho123, spec, ctx.opts.optimizer, init, ctx.rng)
    rank_spec = ObjectiveSpec("rank_tail", side)
    pair = reduced_pair(u, rho123, side)
    v = extract_isometry(pair)
    f = evaluate(u, rho123, rank_spec)
    if ctx.wants_injection(committed):
        inj = ctx.opts.injection
        target = inj.epsilon / (1.0 + inj.epsilon)
        if inj.kind in ("ancilla", "entangling"):
            v = _local_error(ctx) @ v
        elif inj.kind == "generic":
            h = _generator_for(ctx)

            def leak(delta):
                uu = _exp_herm(h, delta) @ u
                p = reduced_pair(uu, rho123, side)
                vv = extract_isometry(p)
                return _ancilla_one_prob(vv @ p @ vv.conj().T)

            delta = _calibrate(leak, f + target)
            u = _exp_herm(h, delta) @ u
            pair = reduced_pair(u, rho123, side)
            v = extract_isometry(pair)
        else:
            raise ValueError(f"unknown injection kind {inj.kind!r}")
        f = _ancilla_one_prob(v @ reduced_pair(u, rho123, side) @ v.conj().T)
    return u, v, f, trace.failed


def _generator_for(ctx: _Context) -> np.ndarray:
    return _random_generator(ctx.inj_rng)


def _pair_step(ctx: _Context, rho12: np.ndarray, committed: bool):
    """Isometry for a two-qubit block with no disentangler in front of it."""
    v = extract_isometry(rho12)
    if ctx.wants_injection(committed):
        inj = ctx.opts.injection
        target = inj.epsilon / (1.0 + inj.epsilon)
        base = _ancilla_one_prob(v @ rho12 @ v.conj().T)
        if inj.kind in ("ancilla", "entangling"):
            v = _local_error(ctx) @ v
        elif inj.kind == "generic":
            h = _generator_for(ctx)
            delta = _calibrate(lambda d: _ancilla_one_prob(_exp_herm(h, d) @ v @ rho12 @ v.conj().T
                                                           @ _exp_herm(h, d).conj().T), base + target)
            v = _exp_herm(h, delta) @ v
        else:
            raise ValueError(f"unknown injection kind {inj.kind!r}")
    return v, _ancilla_one_prob(v @ rho12 @ v.conj().T)


def learn_layer(state: StateVector, layer: int, direction: str = "LR", init_gates: list[np.ndarray] | None = None,
                opts: LearnOptions = LearnOptions(), rng: np.random.Generator | None = None,
                _ctx: _Context | None = None, committed: bool = True) -> LayerResult:
    """One pass over a layer. ``init_gates`` seeds the disentangler undo gates."""
    ctx = _ctx if _ctx is not None else _Context(opts, rng if rng is not None else np.random.default_rng(opts.seed))
    n = state.n
    m = n >> (layer - 1)
    if m < 4:
        raise ValueError(f"layer {layer} does not exist for n = {n}")

    def g(i: int) -> int:
        return i << (layer - 1)

    nd = m // 2 - 1
    dis: list[np.ndarray | None] = [None] * nd
    iso: list[np.ndarray | None] = [None] * (m // 2)
    records = []
    if direction == "LR":
        for k in range(1, nd + 1):
            sites = [g(2 * k - 1), g(2 * k), g(2 * k + 1)]
            rho = ctx.tomography(state, sites)
            init = init_gates[k - 1] if init_gates else None
            u, v, f, failed = _block_step(ctx, rho, "right", init, committed)
            state = apply_two_qubit(state, u, (sites[1], sites[2]))
            state = apply_two_qubit(state, v, (sites[0], sites[1]))
            state, p = _postselect(ctx, state, sites[0], layer, k)
            dis[k - 1], iso[k - 1] = u, v
            records.append(_record(ctx, layer, k, f, p, direction, sites[0], failed, committed))
        sites = [g(m - 1), g(m)]
        v, f = _pair_step(ctx, ctx.tomography(state, sites), committed)
        state = apply_two_qubit(state, v, (sites[0], sites[1]))
        state, p = _postselect(ctx, state, sites[0], layer, m // 2)
        iso[-1] = v
        records.append(_record(ctx, layer, m // 2, f, p, direction, sites[0], False, committed))
    elif direction == "RL":
        for k in range(nd, 0, -1):
            sites = [g(2 * k), g(2 * k + 1), g(2 * k + 2)]
            rho = ctx.tomography(state, sites)
            init = init_gates[k - 1] if init_gates else None
            u, v, f, failed = _block_step(ctx, rho, "left", init, committed)
            state = apply_two_qubit(state, u, (sites[0], sites[1]))
            state = apply_two_qubit(state, v, (sites[1], sites[2]))
            state, p = _postselect(ctx, state, sites[1], layer, k + 1)
            dis[k - 1], iso[k] = u, v
            records.append(_record(ctx, layer, k + 1, f, p, direction, sites[1], failed, committed))
        sites = [g(1), g(2)]
        v, f = _pair_step(ctx, ctx.tomography(state, sites), committed)
        state = apply_two_qubit(state, v, (sites[0], sites[1]))
        state, p = _postselect(ctx, state, sites[0], layer, 1)
        iso[0] = v
        records.append(_record(ctx, layer, 1, f, p, direction, sites[0], False, committed))
    else:
        raise ValueError(f"direction must be 'LR' or 'RL', got {direction!r}")
    return LayerResult(dis, iso, records, state)


def _learn_top(ctx: _Context, state: StateVector, layer: int) -> tuple[np.ndarray, list[StepRecord], StateVector]:
    """Map the dominant eigenvector of the last pair onto |00>; both qubits are post-selection steps."""
    n = state.n
    a, b = n // 2, n
    rho = ctx.tomography(state, [a, b])
    v = extract_top(rho)
    inj = ctx.opts.injection
    if inj is not None and ctx.step_index < inj.steps:
        v = (_local_error(ctx) if inj.kind != "generic" else np.kron(_ancilla_rotation(inj.epsilon), np.eye(2))) @ v
    if inj is not None and ctx.step_index + 1 < inj.steps:
        v = np.kron(np.eye(2), _ancilla_rotation(inj.epsilon)) @ v
    state = apply_two_qubit(state, v, (a, b))
    sigma = v @ rho @ v.conj().T
    records = []
    for q, site in enumerate((a, b), start=1):
        if q == 1:
            leak = _ancilla_one_prob(sigma)
        else:
            leak = float(np.real(sigma[1, 1]))
        state, p = _postselect(ctx, state, site, layer, q)
        records.append(_record(ctx, layer, q, leak, p, "top", site, False, True))
        if q == 1:
            block = sigma[:2, :2]
            tr = float(np.real(np.trace(block)))
            sigma = block / tr if tr > 0 else block
    return v, records, state


def learn_mera(state: StateVector, sweeps: int | None = None, opts: LearnOptions = LearnOptions(),
               rng: np.random.Generator | None = None) -> tuple[MeraCircuit, CertificationReport]:
    """Reconstruct a MERA from the experimental state with unitary control.

    Every layer is refined by ``sweeps`` alternating passes (LR, RL, ...),
    each starting from a fresh copy of the state the previous layers left
    behind; the last pass is committed.
    """
    sweeps = opts.sweeps if sweeps is None else sweeps
    if sweeps < 1:
        raise ValueError("sweeps must be >= 1")
    opts = replace(opts, sweeps=sweeps)
    ctx = _Context(opts, rng if rng is not None else np.random.default_rng(opts.seed))
    n = state.n
    log2_size(n)
    layers = []
    records: list[StepRecord] = []
    for tau in range(1, len(layer_sizes(n)) + 1):
        init = None
        result = None
        for s in range(sweeps):
            direction = "LR" if s % 2 == 0 else "RL"
            result = learn_layer(state, tau, direction, init, opts, _ctx=ctx, committed=(s == sweeps - 1))
            init = result.disentanglers
            log.debug("layer %d sweep %d (%s): max step objective %.3e", tau, s + 1, direction,
                      max(r.objective for r in result.records))
        state = result.state
        records.extend(result.records)
        layers.append(Layer([u.conj().T for u in result.disentanglers], [v.conj().T for v in result.isometries]))
    v_top, top_records, state = _learn_top(ctx, state, len(layers) + 1)
    records.extend(top_records)
    circuit = MeraCircuit(n, layers, v_top.conj().T)
    return circuit, make_report(records, sweeps, opts.chi_recommend_threshold)


@dataclass
class NoPostselectDiagnostics:
    steps: list[StepRecord]
    true_infidelity: float | None
    sweeps_used: int


def learn_mera_no_postselect(state: StateVector, sweeps: int | None = None, opts: LearnOptions = LearnOptions(),
                             rng: np.random.Generator | None = None,
                             truth: StateVector | None = None) -> tuple[MeraCircuit, NoPostselectDiagnostics]:
    """Same pipeline without measuring the ancillas; errors feed into later tomography."""
    opts = replace(opts, postselect=False)
    circuit, report = learn_mera(state, sweeps, opts, rng)
    truth = state if truth is None else truth
    infid = 1.0 - fidelity(generate_state(circuit), truth)
    return circuit, NoPostselectDiagnostics(report.steps, infid, report.sweeps_used)


def oracle_infidelity(circuit: MeraCircuit, truth: StateVector) -> float:
    return 1.0 - fidelity(generate_state(circuit), truth)


__all__ = [
    "StepRecord", "CertificationReport", "Injection", "LearnOptions", "LayerResult", "LearningError",
    "learn_layer", "learn_mera", "learn_mera_no_postselect", "certify", "required_step_precision",
    "infidelity_bound", "cumulative_epsilon", "oracle_infidelity",
]
