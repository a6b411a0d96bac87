import itertools

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings, strategies as st

from meralearn.numerics import (
    NotHermitianError, PSDProjectionError, eig_hermitian, embed_operator, expm_hermitian, haar_unitary,
    kron_all, partial_trace, pauli_basis, pauli_labels, psd_project, random_density, random_hermitian,
    random_state, unitarity_defect, PAULI,
)

seeds = st.integers(min_value=0, max_value=2**32 - 1)


def _partial_trace_by_sums(rho, q, keep):
    """Index-sum oracle: explicit loops over every basis label."""
    keep = sorted(keep)
    drop = [k for k in range(1, q + 1) if k not in keep]
    d = 2 ** len(keep)
    out = np.zeros((d, d), dtype=complex)
    for a in itertools.product((0, 1), repeat=len(keep)):
        for b in itertools.product((0, 1), repeat=len(keep)):
            s = 0
            for e in itertools.product((0, 1), repeat=len(drop)):
                bits_a, bits_b = [0] * q, [0] * q
                for k, v in zip(keep, a):
                    bits_a[k - 1] = v
                for k, v in zip(keep, b):
                    bits_b[k - 1] = v
                for k, v in zip(drop, e):
                    bits_a[k - 1] = bits_b[k - 1] = v
                ia = int("".join(map(str, bits_a)), 2)
                ib = int("".join(map(str, bits_b)), 2)
                s += rho[ia, ib]
            out[int("".join(map(str, a)), 2), int("".join(map(str, b)), 2)] = s
    return out


class TestEig:
    def test_identity(self):
        w, _ = eig_hermitian(np.eye(2))
        assert np.allclose(w, [1, 1])

    def test_diagonal(self):
        w, _ = eig_hermitian(np.diag([0.25] * 4))
        assert np.allclose(w, [0.25] * 4)

    def test_reconstruction_and_phase(self):
        rng = np.random.default_rng(4)
        for _ in range(200):
            h = random_hermitian(4, rng)
            w, v = eig_hermitian(h)
            assert np.all(np.diff(w) <= 0)
            assert np.abs(h - v @ np.diag(w) @ v.conj().T).max() <= 1e-9
            assert np.abs(v.conj().T @ v - np.eye(4)).max() <= 1e-10
            assert np.abs(h @ v - v * w).max() <= 1e-9
            for k in range(4):
                first = v[np.flatnonzero(np.abs(v[:, k]) > 1e-8)[0], k]
                assert abs(first.imag) <= 1e-12 and first.real > 0

    def test_degenerate_order_is_deterministic(self):
        rng = np.random.default_rng(5)
        u = haar_unitary(4, rng)
        h = u @ np.diag([1.0, 1.0, 0.0, 0.0]) @ u.conj().T
        a = eig_hermitian(h)[1]
        b = eig_hermitian(h.copy())[1]
        assert np.array_equal(a, b)

    def test_rejects_non_hermitian(self):
        with pytest.raises(NotHermitianError, match="max"):
            eig_hermitian(np.array([[0, 1], [0, 0]], dtype=complex))

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            eig_hermitian(np.array([[np.nan, 0], [0, 1]]))


class TestExpm:
    def test_zero(self):
        assert np.allclose(expm_hermitian(np.zeros((4, 4)), 0.7), np.eye(4))

    def test_pauli_z_half_turn(self):
        assert np.abs(expm_hermitian(PAULI["Z"], np.pi) + np.eye(2)).max() <= 1e-12

    def test_matches_independent_expm(self):
        rng = np.random.default_rng(7)
        h = random_hermitian(4, rng)
        ours = expm_hermitian(h, 0.3)
        assert np.abs(ours - scipy.linalg.expm(-1j * 0.3 * h)).max() <= 1e-10
        assert unitarity_defect(ours) <= 1e-10

    @settings(max_examples=50, deadline=None)
    @given(seeds, st.floats(-3, 3), st.floats(-3, 3))
    def test_group_property(self, seed, s, t):
        h = random_hermitian(4, np.random.default_rng(seed))
        lhs = expm_hermitian(h, s) @ expm_hermitian(h, t)
        assert np.abs(lhs - expm_hermitian(h, s + t)).max() <= 1e-9


class TestPartialTrace:
    def test_product(self):
        zero = np.diag([1, 0]).astype(complex)
        one = np.diag([0, 1]).astype(complex)
        assert np.allclose(partial_trace(np.kron(zero, one), 2, [1]), zero)

    def test_bell(self):
        phi = np.array([1, 0, 0, 1]) / np.sqrt(2)
        assert np.allclose(partial_trace(np.outer(phi, phi.conj()), 2, [1]), np.eye(2) / 2)

    def test_matches_index_sum_oracle(self):
        rng = np.random.default_rng(11)
        psi = random_state(8, rng)
        rho = np.outer(psi, psi.conj())
        for keep in ([1, 2], [2, 3], [1, 3], [2]):
            assert np.abs(partial_trace(rho, 3, keep) - _partial_trace_by_sums(rho, 3, keep)).max() <= 1e-12

    @settings(max_examples=30, deadline=None)
    @given(seeds, st.floats(-2, 2), st.floats(-2, 2))
    def test_linear(self, seed, a, b):
        rng = np.random.default_rng(seed)
        x, y = random_density(8, rng), random_density(8, rng)
        lhs = partial_trace(a * x + b * y, 3, [1, 3])
        rhs = a * partial_trace(x, 3, [1, 3]) + b * partial_trace(y, 3, [1, 3])
        assert np.abs(lhs - rhs).max() <= 1e-12

    def test_trace_preserved(self):
        rho = random_density(16, np.random.default_rng(2))
        assert abs(np.trace(partial_trace(rho, 4, [2, 4])) - 1) <= 1e-12

    @pytest.mark.parametrize("keep", [[], [0], [4]])
    def test_bad_keep(self, keep):
        with pytest.raises(ValueError):
            partial_trace(np.eye(8) / 8, 3, keep)


class TestHaar:
    def test_deterministic(self):
        a = haar_unitary(4, np.random.default_rng(3))
        b = haar_unitary(4, np.random.default_rng(3))
        assert np.array_equal(a, b)

    def test_unitary(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            assert unitarity_defect(haar_unitary(4, rng)) <= 1e-12

    def test_second_moment(self):
        rng = np.random.default_rng(12)
        vals = [abs(np.trace(haar_unitary(2, rng))) ** 2 for _ in range(10_000)]
        assert abs(np.mean(vals) - 1.0) <= 0.05

    def test_rejects_small_dim(self):
        with pytest.raises(ValueError):
            haar_unitary(1, np.random.default_rng(0))


class TestPauli:
    def test_single(self):
        basis = pauli_basis(1)
        assert len(basis) == 4
        assert abs(np.trace(basis[1] @ basis[2])) == 0

    def test_two_orthogonal(self):
        basis = pauli_basis(2)
        gram = np.array([[np.trace(p @ q) for q in basis] for p in basis])
        assert np.allclose(gram, 4 * np.eye(16))
        assert all(np.allclose(p @ p, np.eye(4)) for p in basis)

    def test_three_complete(self):
        h = random_hermitian(8, np.random.default_rng(9))
        coeffs = [np.trace(p @ h) / 8 for p in pauli_basis(3)]
        resum = sum(c * p for c, p in zip(coeffs, pauli_basis(3)))
        assert np.abs(resum - h).max() <= 1e-12

    def test_order(self):
        assert pauli_labels(2)[:5] == ["II", "IX", "IY", "IZ", "XI"]

    @pytest.mark.parametrize("k", [0, 5])
    def test_range(self, k):
        with pytest.raises(ValueError):
            pauli_basis(k)


class TestPSD:
    def test_idempotent(self):
        rho = random_density(8, np.random.default_rng(1))
        assert np.abs(psd_project(rho) - rho).max() <= 1e-12

    def test_clip(self):
        out = psd_project(np.diag([0.6, 0.6, -0.1, -0.1]))
        assert np.allclose(out, np.diag([0.5, 0.5, 0, 0]), atol=1e-12)

    def test_perturbed_pure_state(self):
        rng = np.random.default_rng(6)
        psi = random_state(4, rng)
        noisy = np.outer(psi, psi.conj()) + 0.05 * random_hermitian(4, rng)
        w, v = np.linalg.eigh(noisy)
        w = np.clip(w, 0, None)
        expected = v @ np.diag(w / w.sum()) @ v.conj().T
        out = psd_project(noisy)
        assert np.abs(out - expected).max() <= 1e-12
        assert abs(np.trace(out) - 1) <= 1e-12
        assert np.linalg.eigvalsh(out).min() >= -1e-12

    def test_rejects_negative(self):
        with pytest.raises(PSDProjectionError):
            psd_project(-np.eye(2))


def test_embed_operator_matches_kron():
    x, z = PAULI["X"], PAULI["Z"]
    assert np.allclose(embed_operator(np.kron(x, z), [0, 2], 3), kron_all([x, np.eye(2), z]))
    assert np.allclose(embed_operator(np.kron(x, z), [2, 0], 3), kron_all([z, np.eye(2), x]))
