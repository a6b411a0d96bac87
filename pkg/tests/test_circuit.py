import json

import numpy as np
import pytest

from meralearn.circuit import (
    CircuitFormatError, Layer, MeraCircuit, circuit_to_dict, circuits_equal, deserialize, expected_gate_count,
    identity_mera, layer_sizes, random_mera, serialize, validate,
)
from meralearn.numerics import unitarity_defect


class TestLayout:
    def test_n8_layers(self):
        c = random_mera(8, np.random.default_rng(1))
        shape = [(len(l.disentanglers), len(l.isometries)) for l in c.layers]
        assert shape == [(3, 4), (1, 2)]
        assert c.gate_count() == 11

    def test_n4(self):
        c = random_mera(4, np.random.default_rng(1))
        assert [(len(l.disentanglers), len(l.isometries)) for l in c.layers] == [(1, 2)]
        assert c.gate_count() == 4

    @pytest.mark.parametrize("n", [4, 8, 16, 32, 64])
    def test_gate_count_formula(self, n):
        c = random_mera(n, np.random.default_rng(n))
        assert c.gate_count() == sum(m - 1 for m in layer_sizes(n)) + 1 == expected_gate_count(n)

    def test_placement(self):
        c = identity_mera(16)
        sites = {(g.kind, g.layer, g.block): g.sites(16) for g in c.gates()}
        assert sites[("disentangler", 1, 1)] == (2, 3)
        assert sites[("isometry", 1, 1)] == (1, 2)
        assert sites[("isometry", 2, 3)] == (10, 12)
        assert sites[("disentangler", 3, 1)] == (8, 12)
        assert sites[("top", 4, 1)] == (8, 16)

    @pytest.mark.parametrize("n", [0, 2, 6, 12, 24])
    def test_rejects_bad_n(self, n):
        with pytest.raises(ValueError):
            random_mera(n, np.random.default_rng(0))


class TestRandom:
    def test_deterministic(self):
        a = random_mera(16, np.random.default_rng(9))
        b = random_mera(16, np.random.default_rng(9))
        assert circuits_equal(a, b)

    def test_unitary(self):
        c = random_mera(32, np.random.default_rng(3))
        assert max(unitarity_defect(g.matrix) for g in c.gates()) <= 1e-12
        assert validate(c).ok


class TestValidate:
    def test_scaled_gate(self):
        c = random_mera(8, np.random.default_rng(2))
        c.layers[1].isometries[1] = 1.01 * c.layers[1].isometries[1]
        report = validate(c)
        assert len(report.violations) == 1
        v = report.violations[0]
        assert (v.kind, v.layer, v.block) == ("unitarity", 2, 2)

    def test_missing_disentangler(self):
        c = random_mera(8, np.random.default_rng(2))
        layers = [Layer(c.layers[0].disentanglers[:2], c.layers[0].isometries), c.layers[1]]
        report = validate(MeraCircuit(8, layers, c.top))
        assert [(v.kind, v.layer, v.block) for v in report.violations] == [("layout", 1, 3)]
        assert "disentangler" in report.violations[0].message

    def test_chi(self):
        c = identity_mera(4)
        assert not validate(MeraCircuit(4, c.layers, c.top, chi=3)).ok


class TestSerialization:
    def test_round_trip_exact(self):
        rng = np.random.default_rng(17)
        for _ in range(100):
            c = random_mera(8, rng)
            back = deserialize(serialize(c))
            assert circuits_equal(c, back, atol=1e-15)
        assert circuits_equal(c, back, atol=0.0)

    def test_truncated_matrix_named(self):
        doc = circuit_to_dict(random_mera(8, np.random.default_rng(0)))
        doc["layers"][1]["isometries"][0] = doc["layers"][1]["isometries"][0][:3]
        with pytest.raises(CircuitFormatError, match="layer 2 isometry 1"):
            deserialize(json.dumps(doc))

    def test_hand_written_identity(self):
        eye = [[[1.0 if r == c else 0.0, 0.0] for c in range(4)] for r in range(4)]
        text = json.dumps({"n": 4, "chi": 2, "layers": [{"disentanglers": [eye], "isometries": [eye, eye]}],
                           "top": eye})
        assert circuits_equal(deserialize(text), identity_mera(4))

    def test_non_unitary_rejected(self):
        doc = circuit_to_dict(identity_mera(4))
        doc["top"][0][0] = [1.001, 0.0]
        with pytest.raises(CircuitFormatError, match="top"):
            deserialize(json.dumps(doc))

    def test_small_defect_tolerated(self):
        doc = circuit_to_dict(identity_mera(4))
        doc["top"][0][0] = [1.0 + 1e-8, 0.0]
        deserialize(json.dumps(doc))

    @pytest.mark.parametrize("text, needle", [
        ("not json", "JSON"),
        ("[]", "object"),
        ('{"n": 8, "layers": []}', "top"),
        ('{"n": 6, "layers": [], "top": []}', "power of two"),
    ])
    def test_malformed(self, text, needle):
        with pytest.raises(CircuitFormatError, match=needle):
            deserialize(text)
