"""Binary 1D open-boundary MERA circuits.

Layer ``tau`` (1 = closest to the physical qubits) acts on the
``m = n / 2**(tau - 1)`` sites of level ``tau - 1``. Using 1-based
layer-local positions, disentangler ``j`` acts on ``(2j, 2j + 1)`` and
isometry ``j`` on ``(2j - 1, 2j)``; the isometry's left input is the
ancilla fixed to ``|0>`` and its right input carries level-``tau`` site
``j``. The top tensor maps ``|00>`` onto the two sites of level ``K - 1``.

Level ``l`` site ``i`` sits on physical qubit ``i * 2**l``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .numerics import TOL, haar_unitary, unitarity_defect

FORMAT_VERSION = 1


class CircuitFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Gate:
    kind: str  # "disentangler" | "isometry" | "top"
    layer: int
    block: int
    matrix: np.ndarray

    def sites(self, n: int) -> tuple[int, int]:
        """Physical qubits (1-based) this gate acts on."""
        if self.kind == "top":
            return n // 2, n
        scale = 2 ** (self.layer - 1)
        left = 2 * self.block if self.kind == "disentangler" else 2 * self.block - 1
        return left * scale, (left + 1) * scale


@dataclass(frozen=True)
class Layer:
    disentanglers: list[np.ndarray]
    isometries: list[np.ndarray]


@dataclass(frozen=True)
class MeraCircuit:
    n: int
    layers: list[Layer]
    top: np.ndarray
    chi: int = 2

    @property
    def depth(self) -> int:
        """Number of disentangler/isometry layers (K - 1)."""
        return len(self.layers)

    def gates(self) -> Iterator[Gate]:
        for tau, layer in enumerate(self.layers, start=1):
            for j, u in enumerate(layer.disentanglers, start=1):
                yield Gate("disentangler", tau, j, u)
            for j, w in enumerate(layer.isometries, start=1):
                yield Gate("isometry", tau, j, w)
        yield Gate("top", self.depth + 1, 1, self.top)

    def gate_count(self) -> int:
        return sum(1 for _ in self.gates())


def log2_size(n: int) -> int:
    if n < 4 or n & (n - 1):
        raise ValueError(f"n = {n} is not a power of two >= 4")
    return n.bit_length() - 1


def layer_sizes(n: int) -> list[int]:
    """Site count m_tau acted on by each layer tau = 1..K-1."""
    k = log2_size(n)
    return [n >> (tau - 1) for tau in range(1, k)]


def expected_gate_count(n: int) -> int:
    return sum(m - 1 for m in layer_sizes(n)) + 1


def _check_chi(chi: int) -> None:
    if chi != 2:
        raise ValueError(f"only chi = 2 is supported, got {chi}")


def random_mera(n: int, rng: np.random.Generator) -> MeraCircuit:
    """Every gate drawn from the Haar measure on U(4)."""
    layers = []
    for m in layer_sizes(n):
        dis = [haar_unitary(4, rng) for _ in range(m // 2 - 1)]
        iso = [haar_unitary(4, rng) for _ in range(m // 2)]
        layers.append(Layer(dis, iso))
    return MeraCircuit(n, layers, haar_unitary(4, rng))


def identity_mera(n: int) -> MeraCircuit:
    eye = np.eye(4, dtype=complex)
    layers = [Layer([eye.copy() for _ in range(m // 2 - 1)], [eye.copy() for _ in range(m // 2)])
              for m in layer_sizes(n)]
    return MeraCircuit(n, layers, eye.copy())


@dataclass
class Violation:
    kind: str  # "layout" | "unitarity" | "shape"
    layer: int
    block: int | None
    message: str


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def validate(circuit: MeraCircuit, tol: float = TOL.unitary) -> ValidationReport:
    report = ValidationReport()
    add = report.violations.append
    try:
        sizes = layer_sizes(circuit.n)
    except ValueError as exc:
        add(Violation("layout", 0, None, str(exc)))
        return report
    if circuit.chi != 2:
        add(Violation("layout", 0, None, f"chi = {circuit.chi}, only 2 supported"))
    if len(circuit.layers) != len(sizes):
        add(Violation("layout", 0, None, f"expected {len(sizes)} layers, found {len(circuit.layers)}"))
    for tau, (m, layer) in enumerate(zip(sizes, circuit.layers), start=1):
        for kind, gates, want in (("disentangler", layer.disentanglers, m // 2 - 1),
                                  ("isometry", layer.isometries, m // 2)):
            if len(gates) != want:
                add(Violation("layout", tau, len(gates) + 1 if len(gates) < want else want + 1,
                              f"layer {tau}: expected {want} {kind}s, found {len(gates)}"))
    for g in circuit.gates():
        m = np.asarray(g.matrix)
        if m.shape != (4, 4):
            add(Violation("shape", g.layer, g.block, f"{g.kind} has shape {m.shape}"))
            continue
        defect = unitarity_defect(m)
        if not np.isfinite(defect) or defect > tol:
            add(Violation("unitarity", g.layer, g.block,
                          f"{g.kind} (layer {g.layer}, block {g.block}) not unitary: defect {defect:.3e}"))
    return report


def _matrix_to_json(m: np.ndarray) -> list:
    return [[[float(z.real), float(z.imag)] for z in row] for row in np.asarray(m)]


def _matrix_from_json(data, where: str, tol: float) -> np.ndarray:
    try:
        arr = np.array(data, dtype=float)
    except (TypeError, ValueError) as exc:
        raise CircuitFormatError(f"{where}: malformed matrix ({exc})") from None
    if arr.shape != (4, 4, 2):
        raise CircuitFormatError(f"{where}: expected 4x4 array of [re, im] pairs, got shape {arr.shape}")
    m = arr[..., 0] + 1j * arr[..., 1]
    defect = unitarity_defect(m)
    if not np.isfinite(defect) or defect > tol:
        raise CircuitFormatError(f"{where}: gate not unitary (defect {defect:.3e})")
    return m


def circuit_to_dict(circuit: MeraCircuit) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "n": circuit.n,
        "chi": circuit.chi,
        "layers": [
            {"disentanglers": [_matrix_to_json(u) for u in layer.disentanglers],
             "isometries": [_matrix_to_json(w) for w in layer.isometries]}
            for layer in circuit.layers
        ],
        "top": _matrix_to_json(circuit.top),
    }


def circuit_from_dict(doc: dict, tol: float = TOL.unitary_file) -> MeraCircuit:
    if not isinstance(doc, dict):
        raise CircuitFormatError("circuit document must be a JSON object")
    for key in ("n", "layers", "top"):
        if key not in doc:
            raise CircuitFormatError(f"missing field '{key}'")
    n = doc["n"]
    if not isinstance(n, int):
        raise CircuitFormatError("field 'n' must be an integer")
    chi = doc.get("chi", 2)
    try:
        sizes = layer_sizes(n)
        _check_chi(chi)
    except ValueError as exc:
        raise CircuitFormatError(str(exc)) from None
    raw_layers = doc["layers"]
    if not isinstance(raw_layers, list) or len(raw_layers) != len(sizes):
        raise CircuitFormatError(f"expected {len(sizes)} layers for n = {n}")
    layers = []
    for tau, (m, raw) in enumerate(zip(sizes, raw_layers), start=1):
        if not isinstance(raw, dict):
            raise CircuitFormatError(f"layer {tau}: expected an object")
        dis_raw = raw.get("disentanglers")
        iso_raw = raw.get("isometries")
        if not isinstance(dis_raw, list) or len(dis_raw) != m // 2 - 1:
            raise CircuitFormatError(f"layer {tau}: expected {m // 2 - 1} disentanglers")
        if not isinstance(iso_raw, list) or len(iso_raw) != m // 2:
            raise CircuitFormatError(f"layer {tau}: expected {m // 2} isometries")
        dis = [_matrix_from_json(d, f"layer {tau} disentangler {j}", tol) for j, d in enumerate(dis_raw, 1)]
        iso = [_matrix_from_json(w, f"layer {tau} isometry {j}", tol) for j, w in enumerate(iso_raw, 1)]
        layers.append(Layer(dis, iso))
    top = _matrix_from_json(doc["top"], "top", tol)
    return MeraCircuit(n, layers, top, chi)


def serialize(circuit: MeraCircuit) -> str:
    return json.dumps(circuit_to_dict(circuit))


def deserialize(text: str, tol: float = TOL.unitary_file) -> MeraCircuit:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CircuitFormatError(f"not valid JSON: {exc}") from None
    return circuit_from_dict(doc, tol)


def circuits_equal(a: MeraCircuit, b: MeraCircuit, atol: float = 0.0) -> bool:
    if a.n != b.n or a.chi != b.chi:
        return False
    ga, gb = list(a.gates()), list(b.gates())
    if len(ga) != len(gb):
        return False
    return all(x.kind == y.kind and np.allclose(x.matrix, y.matrix, rtol=0, atol=atol) for x, y in zip(ga, gb))
