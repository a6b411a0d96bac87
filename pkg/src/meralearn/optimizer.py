"""Disentangler search over the two-qubit unitary group.

A candidate ``U`` acts on two of the three qubits of a block state
``rho123``; the third qubit (the one outside ``U``) pairs with the
neighbouring qubit of ``U`` to form the two-qubit state handed to the
isometry. With ``traced_side="right"`` the block is (a, b, c), ``U`` acts
on (b, c) and c is traced out; ``"left"`` mirrors this.

Conjugate gradient works in the tangent space at the identity spanned by
the 16 two-qubit Pauli strings: the current iterate is absorbed into the
block state at every step, gradients come from forward differences with
the test matrices ``I + i*eps*P``, and the line search runs along
``exp(-i t sum_P g_P P)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .numerics import TOL, eig_hermitian, haar_unitary, pauli_stack, unitarity_defect

PAULI2 = pauli_stack(2)
_EYE2 = np.eye(2, dtype=complex)
_GOLDEN = (math.sqrt(5) - 1) / 2


class NotUnitaryError(ValueError):
    pass


@dataclass(frozen=True)
class ObjectiveSpec:
    kind: str = "rank_tail"  # "rank_tail" | "char_poly_b" | "modified"
    traced_side: str = "right"
    epsilon_weight: float = 0.0

    def __post_init__(self):
        if self.kind not in ("rank_tail", "char_poly_b", "modified"):
            raise ValueError(f"unknown objective {self.kind!r}")
        if self.traced_side not in ("left", "right"):
            raise ValueError(f"traced_side must be 'left' or 'right', got {self.traced_side!r}")
        if self.epsilon_weight < 0:
            raise ValueError("epsilon_weight must be >= 0")
        if self.epsilon_weight and self.kind != "modified":
            raise ValueError("epsilon_weight is only meaningful for the modified objective")


@dataclass(frozen=True)
class OptimizerOptions:
    fd_step: float = 1e-6
    max_iters: int = 500
    f_tol: float = 1e-12
    stall_tol: float = 1e-9
    stall_window: int = 5
    restarts: int = 3
    t_max: float = math.pi
    t_init: float = 1e-3
    t_min: float = 1e-12
    bracket_growth: float = 1.0 + _GOLDEN
    search_rel_width: float = 1e-4
    scan_points: int = 64
    descent_floor: float = 1e-15
    accept_f: float = 1e-10
    failure_f: float = 1e-6
    beta_rule: str = "pr_plus"  # or "literal"

    def __post_init__(self):
        for name in ("fd_step", "f_tol", "stall_tol", "t_max", "t_init", "search_rel_width"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.max_iters < 1 or self.stall_window < 1 or self.restarts < 1:
            raise ValueError("max_iters, stall_window and restarts must be >= 1")
        if self.beta_rule not in ("pr_plus", "literal"):
            raise ValueError(f"unknown beta rule {self.beta_rule!r}")


@dataclass
class OptimizationTrace:
    f: list[list[float]] = field(default_factory=list)
    grad_norm: list[list[float]] = field(default_factory=list)
    t_opt: list[list[float]] = field(default_factory=list)
    winner: int = 0
    evaluations: int = 0
    failed: bool = False


# ---------------------------------------------------------------- objectives

def _check_unitary(u: np.ndarray) -> None:
    defect = unitarity_defect(u)
    if defect > TOL.unitary_input:
        raise NotUnitaryError(f"candidate disentangler is not unitary (defect {defect:.3e})")


def _lift(u: np.ndarray, side: str) -> np.ndarray:
    """Embed a (stack of) 4x4 operator(s) into the 3-qubit block."""
    if side == "right":
        return np.kron(_EYE2, u) if u.ndim == 2 else np.einsum("ab,kcd->kacbd", _EYE2, u).reshape(-1, 8, 8)
    return np.kron(u, _EYE2) if u.ndim == 2 else np.einsum("kab,cd->kacbd", u, _EYE2).reshape(-1, 8, 8)


def _trace_out(rho: np.ndarray, side: str) -> np.ndarray:
    """Trace the outer qubit of a (stack of) 3-qubit block matrices."""
    t = rho.reshape(rho.shape[:-2] + (2, 4, 2, 4)) if side == "left" else rho.reshape(rho.shape[:-2] + (4, 2, 4, 2))
    if side == "left":
        return np.einsum("...aiaj->...ij", t)
    return np.einsum("...iaja->...ij", t)


def reduced_pair(u: np.ndarray, rho123: np.ndarray, side: str) -> np.ndarray:
    """Two-qubit state handed to the isometry after applying ``u`` (stacks allowed)."""
    m = _lift(u, side)
    r = m @ rho123 @ np.swapaxes(m.conj(), -1, -2)
    return _trace_out(r, side)


def _spectra(pair: np.ndarray) -> np.ndarray:
    """Ascending eigenvalues of a (stack of) Hermitian 4x4 matrices."""
    return np.linalg.eigvalsh((pair + np.swapaxes(pair.conj(), -1, -2)) / 2)


def _value_from_pair(pair: np.ndarray, spec: ObjectiveSpec) -> np.ndarray:
    if spec.kind == "char_poly_b":
        tr2 = np.einsum("...ij,...ji->...", pair, pair).real
        tr3 = np.einsum("...ij,...jk,...ki->...", pair, pair, pair).real
        tr1 = np.einsum("...ii->...", pair).real
        # Bocher's identity with the trace kept explicit so scaled inputs stay consistent
        return (tr1**3 - 3 * tr1 * tr2 + 2 * tr3) / 6
    lam = _spectra(pair)
    val = lam[..., 0] + lam[..., 1]
    if spec.kind == "modified":
        val = val + spec.epsilon_weight * lam[..., 2]
    return val


def evaluate(u: np.ndarray, rho123: np.ndarray, spec: ObjectiveSpec) -> float:
    return float(_value_from_pair(reduced_pair(u, rho123, spec.traced_side), spec))


def objective_rank_tail(u: np.ndarray, rho123: np.ndarray, traced_side: str = "right") -> float:
    """Weight of the two smallest eigenvalues of the paired two-qubit state."""
    _check_unitary(u)
    return evaluate(u, rho123, ObjectiveSpec("rank_tail", traced_side))


def objective_char_poly_b(u: np.ndarray, rho123: np.ndarray, traced_side: str = "right") -> float:
    """Cubic coefficient of the characteristic polynomial, computed from traces only."""
    _check_unitary(u)
    return evaluate(u, rho123, ObjectiveSpec("char_poly_b", traced_side))


def objective_modified(u: np.ndarray, rho123: np.ndarray, traced_side: str = "right",
                       epsilon_weight: float = 0.0) -> float:
    _check_unitary(u)
    kind = "modified" if epsilon_weight else "rank_tail"
    return evaluate(u, rho123, ObjectiveSpec(kind, traced_side, epsilon_weight))


# ---------------------------------------------------------------- gradient

def _normalized(pair: np.ndarray) -> np.ndarray:
    tr = np.einsum("...ii->...", pair).real
    return pair / tr[..., None, None]


def gradient_fd(spec: ObjectiveSpec, rho_centered: np.ndarray, fd_step: float = 1e-6,
                f0: float | None = None, central: bool = False) -> np.ndarray:
    """Finite-difference derivatives along all 16 Pauli directions.

    Forward differences use the non-unitary test matrices ``I + i*eps*P``
    verbatim. They inflate the trace by ``1 + eps**2``, so each perturbed
    pair is rescaled to unit trace before the objective is read off. The
    identity component is fixed to zero.
    """
    eye = np.eye(4, dtype=complex)
    plus = eye + 1j * fd_step * PAULI2
    fp = _value_from_pair(_normalized(reduced_pair(plus, rho_centered, spec.traced_side)), spec)
    if central:
        minus = eye - 1j * fd_step * PAULI2
        fm = _value_from_pair(_normalized(reduced_pair(minus, rho_centered, spec.traced_side)), spec)
        g = (fp - fm) / (2 * fd_step)
    else:
        if f0 is None:
            f0 = evaluate(eye, rho_centered, spec)
        g = (fp - f0) / fd_step
    g[0] = 0.0
    return g


# ---------------------------------------------------------------- line search

def _direction_unitary(direction: np.ndarray):
    h = np.tensordot(direction, PAULI2, axes=1)
    w, v = np.linalg.eigh((h + h.conj().T) / 2)
    vh = v.conj().T

    def family(t: float) -> np.ndarray:
        return (v * np.exp(-1j * t * w)) @ vh

    return family


def line_search(f: Callable[[np.ndarray], float], direction: np.ndarray, opts: OptimizerOptions = OptimizerOptions(),
                f0: float | None = None, f_batch: Callable[[np.ndarray], np.ndarray] | None = None,
                ) -> tuple[float, float, int]:
    """Minimise ``t -> f(exp(-i t sum_P d_P P))`` over ``t`` in ``[0, t_max]``.

    ``direction`` is normalised to unit length first, so ``t`` is a rotation
    angle. A bracket is chosen from geometric steps out of ``t = 0`` and a
    uniform scan of ``[0, t_max]`` (``f_batch`` evaluates a stack of
    unitaries at once when given), then refined by golden section. Returns
    ``(t_opt, f(t_opt), evaluations)``; ``t_opt = 0`` when no descent beyond
    round-off is found.
    """
    norm = float(np.linalg.norm(direction))
    if norm == 0:
        raise ValueError("search direction must be non-zero")
    family = _direction_unitary(direction / norm)
    evals = 0

    def phi(t: float) -> float:
        nonlocal evals
        evals += 1
        return f(family(t))

    if f0 is None:
        f0 = phi(0.0)
    floor = opts.descent_floor
    samples = {0.0: f0}
    t = min(opts.t_init, opts.t_max)
    while t > opts.t_min:
        samples[t] = phi(t)
        if samples[t] < f0 - floor:
            break
        t *= 0.1
    # geometric expansion while the value keeps dropping
    t_prev = t
    while samples.get(t_prev, np.inf) < f0 - floor:
        t_next = min(t_prev * opts.bracket_growth, opts.t_max)
        if t_next <= t_prev:
            break
        samples[t_next] = phi(t_next)
        if samples[t_next] >= samples[t_prev]:
            break
        t_prev = t_next
    grid = np.linspace(0.0, opts.t_max, opts.scan_points + 1)[1:]
    if f_batch is not None:
        evals += len(grid)
        values = f_batch(np.stack([family(x) for x in grid]))
    else:
        values = [phi(x) for x in grid]
    samples.update(zip(grid.tolist(), np.asarray(values, dtype=float).tolist()))
    ts = sorted(samples)
    fs = [samples[x] for x in ts]
    k = int(np.argmin(fs))
    if fs[k] >= f0 - floor:
        return 0.0, f0, evals
    best_t, best_f = ts[k], fs[k]
    lo = ts[k - 1] if k > 0 else ts[k]
    hi = ts[k + 1] if k + 1 < len(ts) else ts[k]
    if hi > lo:
        x1 = hi - _GOLDEN * (hi - lo)
        x2 = lo + _GOLDEN * (hi - lo)
        f1, f2 = phi(x1), phi(x2)
        while hi - lo > opts.search_rel_width * max(hi, 1e-300):
            if f1 < f2:
                hi, x2, f2 = x2, x1, f1
                x1 = hi - _GOLDEN * (hi - lo)
                f1 = phi(x1)
            else:
                lo, x1, f1 = x1, x2, f2
                x2 = lo + _GOLDEN * (hi - lo)
                f2 = phi(x2)
        best_t, best_f = min(((best_t, best_f), (x1, f1), (x2, f2)), key=lambda p: p[1])
    return best_t, best_f, evals


# ---------------------------------------------------------------- CG driver

def _beta(g: np.ndarray, g_prev: np.ndarray, d_prev: np.ndarray, rule: str) -> float:
    if rule == "literal":
        den = float(d_prev @ d_prev)
        return max(0.0, float(g @ (d_prev - g)) / den) if den > 0 else 0.0
    den = float(g_prev @ g_prev)
    return max(0.0, float(g @ (g - g_prev)) / den) if den > 0 else 0.0


def _descend(rho123: np.ndarray, spec: ObjectiveSpec, opts: OptimizerOptions, u0: np.ndarray):
    u = u0.copy()
    side = spec.traced_side
    lift0 = _lift(u, side)
    rho_k = lift0 @ rho123 @ lift0.conj().T
    eye = np.eye(4, dtype=complex)
    f_cur = evaluate(eye, rho_k, spec)
    fs, gns, ts = [f_cur], [], []
    evals = 1
    g_prev = d_prev = None
    for _ in range(opts.max_iters):
        if f_cur < opts.f_tol:
            break
        g = gradient_fd(spec, rho_k, opts.fd_step, f0=f_cur)
        evals += 16
        gn = float(np.linalg.norm(g))
        gns.append(gn)
        if gn == 0:
            break
        if d_prev is None:
            d = g
        else:
            d = g + _beta(g, g_prev, d_prev, opts.beta_rule) * d_prev
            if float(d @ g) <= 0:  # not a descent direction; restart along the gradient
                d = g
        rho_fixed = rho_k

        def f_line(w, rho_fixed=rho_fixed):
            return evaluate(w, rho_fixed, spec)

        def f_stack(ws, rho_fixed=rho_fixed):
            return _value_from_pair(reduced_pair(ws, rho_fixed, side), spec)

        t, f_new, ne = line_search(f_line, d, opts, f0=f_cur, f_batch=f_stack)
        evals += ne
        ts.append(t)
        if t > 0:
            step = _direction_unitary(d / np.linalg.norm(d))(t)
            u = step @ u
            lift = _lift(step, side)
            rho_k = lift @ rho_k @ lift.conj().T
            f_cur = f_new
        fs.append(f_cur)
        g_prev, d_prev = g, d
        if t == 0 and d is g:
            break
        if t == 0:
            d_prev = None
        w = opts.stall_window
        if len(fs) > w:
            old = fs[-1 - w]
            if old - f_cur <= opts.stall_tol * max(old, 1e-300):
                break
    # re-polish unitarity accumulated over many products
    uu, _, vh = np.linalg.svd(u)
    u = uu @ vh
    return u, evaluate(u, rho123, spec), fs, gns, ts, evals


def cg_minimize(rho123: np.ndarray, spec: ObjectiveSpec = ObjectiveSpec(),
                opts: OptimizerOptions = OptimizerOptions(), init: np.ndarray | None = None,
                rng: np.random.Generator | None = None) -> tuple[np.ndarray, float, OptimizationTrace]:
    """Polak-Ribiere conjugate gradient over U(4), best of several restarts.

    Restart 0 starts from ``init`` when given; the other restarts start from
    Haar-random unitaries. Restarts stop early once one reaches
    ``opts.accept_f``. ``trace.failed`` is set when the best value stays
    above ``opts.failure_f``.
    """
    rho123 = np.asarray(rho123, dtype=complex)
    if rho123.shape != (8, 8):
        raise ValueError("rho123 must be an 8x8 block density matrix")
    rng = rng if rng is not None else np.random.default_rng(0)
    trace = OptimizationTrace()
    best = None
    for r in range(opts.restarts):
        if r == 0 and init is not None:
            _check_unitary(init)
            u0 = np.asarray(init, dtype=complex)
        elif r == 0:
            u0 = np.eye(4, dtype=complex)
        else:
            u0 = haar_unitary(4, rng)
        u, f_min, fs, gns, ts, ne = _descend(rho123, spec, opts, u0)
        trace.f.append(fs)
        trace.grad_norm.append(gns)
        trace.t_opt.append(ts)
        trace.evaluations += ne
        if best is None or f_min < best[1]:
            best = (u, f_min, r)
        if best[1] <= opts.accept_f:
            break
    u, f_min, trace.winner = best
    trace.failed = f_min > opts.failure_f
    return u, f_min, trace


# ---------------------------------------------------------------- isometry

def extract_isometry(rho12: np.ndarray) -> np.ndarray:
    """Unitary mapping the two dominant eigenvectors onto |00>, |01> (the rest onto |10>, |11>)."""
    _, vecs = eig_hermitian(np.asarray(rho12, dtype=complex))
    v = vecs.conj().T
    uu, _, vh = np.linalg.svd(v)
    return uu @ vh


def extract_top(rho12: np.ndarray) -> np.ndarray:
    """Unitary mapping the dominant eigenvector of a two-qubit state onto |00>."""
    return extract_isometry(rho12)
