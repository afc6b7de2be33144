import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from l96deg.model import (
    BlowUpError,
    L96Config,
    SubspaceIndexing,
    bilinear_b,
    drift,
    indexing,
    jacobian_db,
    m_k_matrix,
    m_k_triples,
    matrix_to_csv,
    m_stack,
    project_invariant,
    project_transverse,
    shift_state,
    transverse_generator,
)


def e(j, n=9):
    out = np.zeros(n)
    out[j % n] = 1.0
    return out


class TestBilinear:
    def test_basis_self_cancellation(self):
        for n in (9, 12, 15):
            for k in range(n):
                assert np.all(bilinear_b(e(k, n), e(k, n)) == 0)

    def test_e1_e2_gives_minus_e3(self):
        assert np.array_equal(bilinear_b(e(1), e(2)), -e(3))

    def test_zero(self):
        z = np.zeros(9)
        assert np.all(bilinear_b(z, z) == 0)

    def test_energy_conservation(self):
        rng = np.random.default_rng(42)
        for n in (9, 15):
            for _ in range(1000):
                u = rng.uniform(-5, 5, n)
                q = abs(bilinear_b(u, u) @ u)
                assert q <= 1e-12 * (1 + np.linalg.norm(u) ** 3)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            bilinear_b(np.zeros(9), np.zeros(12))

    @given(st.integers(0, 8), st.integers(0, 8),
           st.floats(-3, 3), st.floats(-3, 3))
    @settings(max_examples=50, deadline=None)
    def test_bilinearity_first_argument(self, i, j, a, b):
        v = e(4)
        lhs = bilinear_b(a * e(i) + b * e(j), v)
        rhs = a * bilinear_b(e(i), v) + b * bilinear_b(e(j), v)
        assert np.allclose(lhs, rhs, atol=1e-12)


class TestDrift:
    def test_zero(self):
        assert np.all(drift(np.zeros(9), 1.0) == 0)

    def test_invariant_points_are_linear(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            y = np.zeros(9)
            y[::3] = rng.standard_normal(3)
            assert np.array_equal(drift(y, 0.7), -0.7 * y)

    def test_e1_plus_e2(self):
        assert np.array_equal(drift(e(1) + e(2), 0.0), -e(3))

    def test_blow_up_surfaces(self):
        u = np.full(9, np.inf)
        with pytest.raises(BlowUpError):
            drift(u, 1.0)


class TestJacobian:
    def test_zero_state(self):
        assert np.all(jacobian_db(np.zeros(9)) == 0)

    def test_trace_free(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            u = rng.standard_normal(9)
            assert np.trace(jacobian_db(u)) == 0.0

    def test_finite_difference(self):
        rng = np.random.default_rng(2)
        h = 1e-6
        for _ in range(10):
            u = rng.standard_normal(9)
            v = rng.standard_normal(9)
            fd = (bilinear_b(u + h * v, u + h * v) - bilinear_b(u, u)) / h
            err = np.abs(fd - jacobian_db(u) @ v).max()
            assert err <= 20 * h

    def test_invariant_rows_vanish_exactly(self):
        rng = np.random.default_rng(3)
        for n in (9, 15):
            idx = indexing(n)
            for _ in range(50):
                y = np.zeros(n, dtype=np.int64)
                y[list(idx.forced)] = rng.integers(-9, 10, idx.k)
                w = np.zeros(n, dtype=np.int64)
                w[list(idx.transverse)] = rng.integers(-9, 10, 2 * idx.k)
                image = jacobian_db(y) @ w
                assert np.all(project_invariant(image) == 0)

    def test_integer_dtype_preserved(self):
        u = np.arange(9, dtype=np.int64)
        assert jacobian_db(u).dtype == np.int64

    def test_shift_covariance(self):
        rng = np.random.default_rng(4)
        for _ in range(25):
            u = rng.standard_normal(12)
            lhs = jacobian_db(shift_state(u, 3))
            rhs = np.roll(np.roll(jacobian_db(u), 3, axis=0), 3, axis=1)
            assert np.array_equal(lhs, rhs)


class TestProjections:
    def test_examples(self):
        assert np.array_equal(project_invariant(e(3)), e(3))
        assert np.all(project_transverse(e(3)) == 0)
        assert np.all(project_invariant(e(1)) == 0)
        assert np.array_equal(project_transverse(e(1)), e(1))

    @given(st.lists(st.floats(-10, 10), min_size=9, max_size=9))
    @settings(max_examples=50, deadline=None)
    def test_complementary(self, entries):
        u = np.array(entries)
        assert np.array_equal(project_invariant(u) + project_transverse(u), u)


class TestCouplingMatrices:
    def test_n9_k3_compact_form(self):
        # E_{3,4} - E_{3,2} + E_{2,1} - E_{4,3} in 1-based compact indices
        expected = {(2, 3): 1, (2, 1): -1, (1, 0): 1, (3, 2): -1}
        assert dict(((i, j), v) for i, j, v in m_k_triples(3, 9)) == expected

    def test_n9_k3_original_positions(self):
        # original-index form E_{4,5} - E_{4,2} + E_{2,1} - E_{5,4}
        idx = indexing(9)
        got = {(idx.original_of(i), idx.original_of(j)): v
               for i, j, v in m_k_triples(3, 9)}
        assert got == {(4, 5): 1, (4, 2): -1, (2, 1): 1, (5, 4): -1}

    def test_traceless_and_sparse(self):
        for n in (9, 12, 15):
            for k in range(0, n, 3):
                m = m_k_matrix(k, n)
                assert np.trace(m) == 0
                assert (m != 0).sum() == 4
                assert set(np.unique(m)) <= {-1, 0, 1}

    def test_n3_degenerates_to_zero(self):
        assert m_k_triples(0, 3) == []
        assert np.all(m_k_matrix(0, 3) == 0)

    def test_rejects_transverse_index(self):
        with pytest.raises(IndexError):
            m_k_matrix(1, 9)

    def test_wraps_modulo_n(self):
        assert np.array_equal(m_k_matrix(9, 9), m_k_matrix(0, 9))

    def test_matches_jacobian_block(self):
        rng = np.random.default_rng(5)
        for n in (9, 15):
            idx = indexing(n)
            for _ in range(20):
                y = np.zeros(n)
                y[list(idx.forced)] = rng.integers(-5, 6, idx.k).astype(float)
                block = jacobian_db(y)[np.ix_(idx.transverse, idx.transverse)]
                assert np.array_equal(block, transverse_generator(y))


class TestTransverseGenerator:
    def test_zero(self):
        assert np.all(transverse_generator(np.zeros(9)) == 0)

    def test_single_site(self):
        assert np.array_equal(transverse_generator(e(3)), m_k_matrix(3, 9))

    def test_rejects_off_subspace_points(self):
        with pytest.raises(ValueError):
            transverse_generator(e(1))

    def test_stack_shape(self):
        assert m_stack(9).shape == (3, 6, 6)


class TestIndexing:
    def test_partition(self):
        for n in (3, 9, 15):
            idx = SubspaceIndexing(n)
            assert len(idx.forced) == n // 3
            assert len(idx.transverse) == 2 * (n // 3)
            assert sorted(idx.forced + idx.transverse) == list(range(n))
            assert not set(idx.forced) & set(idx.transverse)

    def test_order_preserving_bijection(self):
        idx = SubspaceIndexing(15)
        assert idx.transverse == (1, 2, 4, 5, 7, 8, 10, 11, 13, 14)
        for c, j in enumerate(idx.transverse):
            assert idx.compact_of(j) == c
            assert idx.original_of(c) == j

    def test_rejects_bad_sizes(self):
        for bad in (0, 4, 7, -3):
            with pytest.raises(ValueError):
                SubspaceIndexing(bad)

    def test_rejects_forced_lookup(self):
        with pytest.raises(IndexError):
            SubspaceIndexing(9).compact_of(3)


class TestConfig:
    def test_degenerate_constructor(self):
        cfg = L96Config.degenerate(9, 0.5, sigma_forced=2.0)
        assert cfg.sigma == tuple(2.0 if j % 3 == 0 else 0.0 for j in range(9))
        assert cfg.active_indices == (0, 3, 6)

    def test_degenerate_pattern_enforced(self):
        with pytest.raises(ValueError):
            L96Config(n=9, epsilon=1.0, sigma=(1.0,) * 9)
        with pytest.raises(ValueError):
            L96Config(n=9, epsilon=1.0,
                      sigma=tuple(0.0 for _ in range(9)))

    def test_custom_mode_permits_anything(self):
        cfg = L96Config(n=9, epsilon=1.0, sigma=(1.0,) * 9, mode="custom")
        assert cfg.active_indices == tuple(range(9))

    def test_validation(self):
        with pytest.raises(ValueError):
            L96Config.degenerate(9, -1.0)
        with pytest.raises(ValueError):
            L96Config.degenerate(9, 1.0, dt=0.0)
        with pytest.raises(ValueError):
            L96Config.degenerate(10, 1.0)

    def test_matrix_csv(self):
        text = matrix_to_csv(m_k_matrix(3, 9))
        assert text.splitlines()[1] == "1,0,0,0,0,0"
