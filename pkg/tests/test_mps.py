import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings, strategies as st

from decocrit.mps import (
    LocalOperator,
    MpsError,
    MpsState,
    apply_gate,
    apply_gate_longrange,
    basis_state,
    canonicalize,
    expect_string,
    from_dense,
    is_canonical,
    norm,
    normalize,
    overlap,
    random_mps,
    swap_operator,
    to_dense,
    truncation_rank,
)
from decocrit.pauli import X, Z

from conftest import dense_op


def _dense_two_site(L, op, i, j):
    """Dense matrix of a two-site operator on sites i < j (kron order i, j)."""
    full = np.zeros((2**L, 2**L), dtype=complex)
    op4 = op.reshape(2, 2, 2, 2)
    for a in range(2):
        for b in range(2):
            for c in range(2):
                for e in range(2):
                    if op4[a, b, c, e] == 0:
                        continue
                    ki = np.outer(np.eye(2)[a], np.eye(2)[c])
                    kj = np.outer(np.eye(2)[b], np.eye(2)[e])
                    full += op4[a, b, c, e] * dense_op(L, {i: ki, j: kj})
    return full


def _random_unitary(rng, n):
    q, r = np.linalg.qr(rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n)))
    return q * (np.diag(r) / abs(np.diag(r)))


class TestConstruction:
    def test_boundary_bonds_checked(self):
        with pytest.raises(MpsError):
            MpsState((np.ones((2, 2, 1)),), 2)

    def test_bond_mismatch(self):
        with pytest.raises(MpsError):
            MpsState((np.ones((1, 2, 3)), np.ones((2, 2, 1))), 2)

    def test_local_operator_shape(self):
        with pytest.raises(MpsError):
            LocalOperator(np.eye(3), span=2)
        assert LocalOperator(np.eye(16), span=2).local_dim == 4

    def test_dense_roundtrip(self, rng):
        v = rng.standard_normal(64) + 1j * rng.standard_normal(64)
        s = from_dense(v, 2)
        np.testing.assert_allclose(to_dense(s), v, atol=1e-12)


class TestCanonicalize:
    def test_product_state_unchanged(self):
        s = basis_state([0, 0, 0, 0])
        c = canonicalize(s, 0)
        assert c.bond_dims == [1, 1, 1]
        np.testing.assert_allclose(to_dense(c), to_dense(s))

    @pytest.mark.parametrize("center", range(6))
    def test_same_vector(self, center):
        s = random_mps(6, 2, 8, seed=3)
        c = canonicalize(s, center)
        val = overlap(c, s) / (norm(s) * norm(c))
        assert abs(val - 1) < 1e-12

    @pytest.mark.parametrize("center", [0, 2, 5])
    def test_orthonormality(self, center):
        c = canonicalize(random_mps(6, 2, 8, seed=5), center)
        assert is_canonical(c, center, atol=1e-10)
        for i, t in enumerate(c.tensors):
            if i < center:
                m = t.reshape(-1, t.shape[2])
                np.testing.assert_allclose(m.conj().T @ m, np.eye(t.shape[2]), atol=1e-10)
            elif i > center:
                m = t.reshape(t.shape[0], -1)
                np.testing.assert_allclose(m @ m.conj().T, np.eye(t.shape[0]), atol=1e-10)

    def test_out_of_range(self):
        with pytest.raises(MpsError):
            canonicalize(random_mps(4, 2, 2, seed=0), 4)

    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(0, 10**6), center=st.integers(0, 4))
    def test_gauge_invariance(self, seed, center):
        s = random_mps(5, 2, 4, seed=seed)
        ops = [(1, X), (3, Z)]
        c = canonicalize(s, center)
        assert abs(expect_string(c, ops, c) - expect_string(s, ops, s)) < 1e-10 * norm(s) ** 2
        assert abs(overlap(c, c) - overlap(s, s)) < 1e-10 * norm(s) ** 2


class TestTruncationRank:
    def test_cutoff_and_cap(self):
        s = np.array([1.0, 0.5, 1e-8])
        assert truncation_rank(s, 10, 1e-6)[0] == 2
        assert truncation_rank(s, 1, 0.0)[0] == 1

    def test_tie_group_kept_whole(self):
        s = np.array([1.0, 0.5, 0.5, 0.5, 0.1])
        keep, _ = truncation_rank(s, 3, 0.0)
        # the tie group straddles the cap; keeping it whole would exceed chi_max, so it is dropped
        assert keep == 1
        assert truncation_rank(s, 4, 0.0)[0] == 4

    def test_discarded_weight(self):
        s = np.array([1.0, 0.1, 0.01])
        keep, disc = truncation_rank(s, 2, 0.0)
        assert keep == 2
        assert disc == pytest.approx(1e-4 / np.sum(s**2))


class TestApplyGate:
    def test_identity_gate(self):
        s = random_mps(5, 2, 4, seed=1)
        out = apply_gate(s, LocalOperator(np.eye(4), 2), 2)
        np.testing.assert_allclose(to_dense(out), to_dense(s), atol=1e-12)
        assert out.truncation_error == 0.0

    def test_swap_on_product(self):
        out = apply_gate(basis_state([0, 1]), swap_operator(2), 0)
        np.testing.assert_allclose(to_dense(out), to_dense(basis_state([1, 0])), atol=1e-14)

    def test_exp_zz_on_plus_plus(self):
        tau = 0.3
        plus = np.ones(2) / np.sqrt(2)
        from decocrit.mps import product_state

        s = product_state([plus, plus])
        gate = sla.expm(tau * np.kron(Z, Z))
        out = to_dense(apply_gate(s, LocalOperator(gate, 2), 0))
        c, sh = np.cosh(tau), np.sinh(tau)
        np.testing.assert_allclose(out, np.array([c + sh, c - sh, c - sh, c + sh]) / 2, atol=1e-14)
        np.testing.assert_allclose(out, gate @ np.kron(plus, plus), atol=1e-14)

    def test_last_site_rejected(self):
        with pytest.raises(MpsError):
            apply_gate(random_mps(4, 2, 2, seed=0), swap_operator(2), 3)

    @pytest.mark.parametrize("site", range(5))
    def test_exact_without_truncation(self, rng, site):
        L = 6
        s = random_mps(L, 2, 8, seed=11).with_settings(chi_max=64, sv_cutoff=0.0)
        op = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
        out = apply_gate(s, LocalOperator(op, 2), site)
        np.testing.assert_allclose(to_dense(out), _dense_two_site(L, op, site, site + 1) @ to_dense(s), atol=1e-12)

    def test_unitary_preserves_norm(self, rng):
        s = normalize(random_mps(6, 2, 8, seed=2).with_settings(chi_max=64, sv_cutoff=0.0))
        out = apply_gate(s, LocalOperator(_random_unitary(rng, 4), 2), 2)
        assert abs(norm(out) - 1.0) < 1e-12

    def test_chi_cap_respected(self, rng):
        s = random_mps(8, 2, 16, seed=4).with_settings(chi_max=5, sv_cutoff=0.0)
        out = apply_gate(s, LocalOperator(_random_unitary(rng, 4), 2), 3)
        assert out.bond_dims[3] <= 5
        assert out.truncation_error > 0


class TestLongRange:
    def test_identity(self):
        s = random_mps(5, 2, 4, seed=7)
        out = apply_gate_longrange(s, LocalOperator(np.eye(4), 2), 0, 4)
        np.testing.assert_allclose(to_dense(out), to_dense(s), atol=1e-12)

    def test_zz_on_product(self):
        s = basis_state([0, 1, 1, 0])
        out = apply_gate_longrange(s, LocalOperator(np.kron(Z, Z), 2), 0, 3)
        np.testing.assert_allclose(to_dense(out), dense_op(4, {0: Z, 3: Z}) @ to_dense(s), atol=1e-14)

    @pytest.mark.parametrize("i,j", [(i, j) for i in range(6) for j in range(i + 1, 6)])
    def test_matches_dense(self, rng, i, j):
        L = 6
        s = random_mps(L, 2, 8, seed=i * 10 + j).with_settings(chi_max=64, sv_cutoff=0.0)
        op = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
        out = apply_gate_longrange(s, LocalOperator(op, 2), i, j)
        np.testing.assert_allclose(to_dense(out), _dense_two_site(L, op, i, j) @ to_dense(s), atol=1e-10)

    def test_bad_indices(self):
        s = random_mps(4, 2, 2, seed=0)
        with pytest.raises(MpsError):
            apply_gate_longrange(s, swap_operator(2), 2, 2)
        with pytest.raises(MpsError):
            apply_gate_longrange(s, swap_operator(2), 0, 4)


class TestContractions:
    def test_normalized_self_overlap(self):
        s = normalize(random_mps(5, 2, 4, seed=9))
        assert abs(overlap(s, s) - 1) < 1e-12

    def test_orthogonal_basis(self):
        assert overlap(basis_state([0, 0, 0]), basis_state([1, 0, 0])) == 0

    def test_overlap_vs_dense(self):
        a, b = random_mps(5, 2, 4, seed=1), random_mps(5, 2, 4, seed=2)
        assert abs(overlap(a, b) - np.vdot(to_dense(a), to_dense(b))) < 1e-12 * norm(a) * norm(b)

    def test_empty_string_is_overlap(self):
        a, b = random_mps(4, 2, 4, seed=1), random_mps(4, 2, 4, seed=2)
        assert expect_string(a, [], b) == pytest.approx(overlap(a, b), abs=1e-12)

    def test_z_on_eigenstate(self):
        s = basis_state([0, 0, 0])
        assert expect_string(s, [(0, Z)], s) == pytest.approx(1.0)

    def test_string_vs_dense(self):
        s = random_mps(6, 2, 8, seed=21)
        v = to_dense(s)
        ref = np.vdot(v, dense_op(6, {1: X, 2: X, 3: X}) @ v)
        assert abs(expect_string(s, [(1, X), (2, X), (3, X)], s) - ref) < 1e-12 * abs(ref) + 1e-12

    def test_duplicate_sites_rejected(self):
        s = random_mps(4, 2, 2, seed=0)
        with pytest.raises(MpsError):
            expect_string(s, [(1, X), (1, Z)], s)
