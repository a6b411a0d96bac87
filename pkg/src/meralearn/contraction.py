"""Exact MERA overlaps by sweeping a boundary tensor across the chain.

Both circuits are unrolled into a network of small tensors: the ket copy
of ``A`` and the complex-conjugated copy of ``B`` share their physical
legs. Isometry ancilla inputs are contracted against ``|0>`` when the
tensor is built and the top tensor is stored as the 4-vector it
produces from ``|00>``. Tensors are absorbed into a running boundary
tensor column by column from left to right.
"""

from __future__ import annotations

import itertools
import json
import warnings
from dataclasses import asdict, dataclass

import numpy as np

from .circuit import MeraCircuit, log2_size
from .numerics import hermiticity_defect


@dataclass
class ContractionStats:
    max_open_bonds: int
    multiply_adds: int
    columns: int

    def to_dict(self) -> dict:
        return {"format_version": 1, **asdict(self)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


@dataclass
class _Node:
    tensor: np.ndarray
    legs: list[int]
    column: int
    layer: int


def predicted_max_bonds(n: int, chi: int = 2) -> int:
    """Open-bond bound for a vertical cut: two copies, two bonds per layer."""
    if chi != 2:
        raise ValueError("only chi = 2 circuits are supported")
    return 4 * log2_size(n)


def _unroll(circuit: MeraCircuit, counter: itertools.count, conj: bool,
            matrices: dict | None = None) -> tuple[list[_Node], dict[int, int]]:
    """Tensors of one circuit copy and the labels of its physical output legs."""
    n = circuit.n
    current: dict[int, int] = {}

    def mat(g):
        m = matrices.get((g.kind, g.layer, g.block), g.matrix) if matrices else g.matrix
        return np.conj(m) if conj else np.asarray(m)

    def column(*sites):
        return (max(sites) + 1) // 2

    nodes = []
    gates = list(circuit.gates())
    top = gates[-1]
    a, b = top.sites(n)
    current[a], current[b] = next(counter), next(counter)
    nodes.append(_Node(mat(top)[:, 0].reshape(2, 2), [current[a], current[b]], column(a, b), circuit.depth + 1))
    for tau in range(circuit.depth, 0, -1):
        layer = [g for g in gates if g.layer == tau]
        for g in layer:
            if g.kind != "isometry":
                continue
            anc, keep = g.sites(n)
            t = mat(g).reshape(2, 2, 2, 2)[:, :, 0, :]
            legs = [next(counter), next(counter), current[keep]]
            current[anc], current[keep] = legs[0], legs[1]
            nodes.append(_Node(t, legs, column(anc, keep), tau))
        for g in layer:
            if g.kind != "disentangler":
                continue
            i, j = g.sites(n)
            t = mat(g).reshape(2, 2, 2, 2)
            legs = [next(counter), next(counter), current[i], current[j]]
            current[i], current[j] = legs[0], legs[1]
            nodes.append(_Node(t, legs, column(i, j), tau))
    return nodes, current


def _network(a: MeraCircuit, b: MeraCircuit, a_matrices: dict | None = None) -> list[_Node]:
    if a.n != b.n:
        raise ValueError(f"circuit sizes differ: {a.n} != {b.n}")
    counter = itertools.count()
    ket, phys = _unroll(a, counter, conj=False, matrices=a_matrices)
    bra, bra_phys = _unroll(b, counter, conj=True)
    rename = {bra_phys[q]: phys[q] for q in phys}
    for node in bra:
        node.legs = [rename.get(x, x) for x in node.legs]
    # within a column: top-down for the ket, bottom-up for the bra, so the
    # physical legs close as soon as both copies reach them
    ket.sort(key=lambda nd: (nd.column, -nd.layer))
    bra.sort(key=lambda nd: (nd.column, nd.layer))
    order = []
    for col in sorted({nd.column for nd in ket}):
        order += [nd for nd in ket if nd.column == col]
        order += [nd for nd in bra if nd.column == col]
    return order


def _contract(nodes: list[_Node]) -> tuple[complex, ContractionStats]:
    tensor, legs = nodes[0].tensor, list(nodes[0].legs)
    max_open, cost = len(legs), 0
    for node in nodes[1:]:
        shared = [x for x in legs if x in node.legs]
        ax_t = [legs.index(x) for x in shared]
        ax_n = [node.legs.index(x) for x in shared]
        only_t = len(legs) - len(shared)
        only_n = len(node.legs) - len(shared)
        cost += 2 ** (only_t + len(shared) + only_n)
        tensor = np.tensordot(tensor, node.tensor, axes=(ax_t, ax_n))
        legs = [x for x in legs if x not in shared] + [x for x in node.legs if x not in shared]
        max_open = max(max_open, len(legs))
    if legs:
        raise RuntimeError(f"network left {len(legs)} legs open")
    columns = max(nd.column for nd in nodes)
    return complex(tensor), ContractionStats(max_open, cost, columns)


def overlap(a: MeraCircuit, b: MeraCircuit) -> tuple[complex, ContractionStats]:
    """<psi_B | psi_A> with bond and cost accounting."""
    return _contract(_network(a, b))


def fidelity(a: MeraCircuit, b: MeraCircuit) -> float:
    value, _ = overlap(a, b)
    return float(abs(value) ** 2)


def expectation_product(circuit: MeraCircuit, observables: list[np.ndarray | None]) -> float | complex:
    """<psi| (x)_i A_i |psi> with each A_i folded into the last gate touching qubit i."""
    n = circuit.n
    if len(observables) != n:
        raise ValueError(f"need {n} site operators, got {len(observables)}")
    ops = [np.eye(2, dtype=complex) if o is None else np.asarray(o, dtype=complex) for o in observables]
    hermitian = all(hermiticity_defect(o) <= 1e-10 for o in ops)
    if not hermitian:
        warnings.warn("non-Hermitian site operator; returning a complex value", stacklevel=2)
    if circuit.depth == 0:
        raise ValueError("circuit has no layers")
    # generation order within layer 1: isometries first, then disentanglers
    last: dict[int, object] = {}
    first_layer = [g for g in circuit.gates() if g.layer == 1]
    for kind in ("isometry", "disentangler"):
        for g in first_layer:
            if g.kind == kind:
                for q in g.sites(n):
                    last[q] = g
    folded: dict = {}
    for g in {id(g): g for g in last.values()}.values():
        i, j = g.sites(n)
        oi = ops[i - 1] if last[i] is g else np.eye(2)
        oj = ops[j - 1] if last[j] is g else np.eye(2)
        folded[(g.kind, g.layer, g.block)] = np.kron(oi, oj) @ g.matrix
    value, _ = _contract(_network(circuit, circuit, a_matrices=folded))
    return value.real if hermitian else value


def cost_slope(ns: list[int], costs: list[float]) -> float:
    """Least-squares slope of log(cost) against log(n)."""
    slope, _ = np.polyfit(np.log(ns), np.log(costs), 1)
    return float(slope)


def bond_profile(n: int) -> ContractionStats:
    """Bond and cost accounting for an n-site overlap without doing the arithmetic."""
    from .circuit import identity_mera

    c = identity_mera(n)
    nodes = _network(c, c)
    legs = list(nodes[0].legs)
    max_open, cost = len(legs), 0
    for node in nodes[1:]:
        shared = [x for x in legs if x in node.legs]
        cost += 2 ** (len(legs) + len(node.legs) - len(shared))
        legs = [x for x in legs if x not in shared] + [x for x in node.legs if x not in shared]
        max_open = max(max_open, len(legs))
    return ContractionStats(max_open, cost, max(nd.column for nd in nodes))
