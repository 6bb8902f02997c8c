"""Tests for the design builders and the induced prior marginal covariance."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cmrcov.designs import (
    ConstantContinuousColumn,
    MissingCategory,
    build_categorical,
    build_general,
    build_intercept,
    build_matrix_variate,
    build_multi_categorical,
    gen_mrc_covariate,
    prior_marginal_cov,
)
from cmrcov.randcore import RngStream


class TestBuilders:
    def test_intercept(self):
        d = build_intercept(4)
        d.validate()
        assert np.array_equal(d.x, np.ones((4, 1)))
        assert d.column_kind == ["intercept"]

    def test_intercept_rejects_bad_p(self):
        with pytest.raises(ValueError):
            build_intercept(0)

    def test_categorical_one_hot(self):
        d = build_categorical([1, 1, 2, 3, 3])
        d.validate()
        assert d.x.shape == (5, 3)
        assert np.array_equal(d.x.sum(axis=1), np.ones(5))  # all levels kept
        assert np.array_equal(d.x[:, 0], [1, 1, 0, 0, 0])
        assert np.array_equal(d.ridge_group, [0, 1, 2])

    def test_categorical_missing_level_raises(self):
        with pytest.raises(MissingCategory):
            build_categorical([1, 3, 3])

    def test_categorical_zero_label_raises(self):
        with pytest.raises(MissingCategory):
            build_categorical([0, 1])

    def test_multi_categorical_blocks_and_groups(self):
        d = build_multi_categorical([[1, 1, 2, 2], [1, 2, 1, 2]])
        d.validate()
        assert d.x.shape == (4, 4)
        # one ridge group per source label vector
        assert np.array_equal(d.ridge_group, [0, 0, 1, 1])

    def test_multi_categorical_length_mismatch(self):
        with pytest.raises(ValueError):
            build_multi_categorical([[1, 2], [1, 2, 1]])

    def test_matrix_variate_column_major_order(self):
        """Variable j = l + p1*k for row l, column k: rows cycle fastest."""
        d = build_matrix_variate(2, 3)
        d.validate()
        assert d.x.shape == (6, 5)
        row_block = d.x[:, :2]
        col_block = d.x[:, 2:]
        assert np.array_equal(np.argmax(row_block, axis=1), [0, 1, 0, 1, 0, 1])
        assert np.array_equal(np.argmax(col_block, axis=1), [0, 0, 1, 1, 2, 2])

    def test_general_prepends_intercept_and_groups_sources(self):
        d = build_general(
            [
                ("grp", "categorical", np.array([1, 1, 2])),
                ("score", "continuous", np.array([0.1, 0.5, 0.9])),
            ]
        )
        d.validate()
        assert d.column_kind[0] == "intercept"
        assert d.x.shape == (3, 4)
        assert np.array_equal(d.ridge_group, [0, 1, 1, 2])
        # continuous column standardized by default
        assert d.x[:, 3].mean() == pytest.approx(0.0, abs=1e-12)
        assert d.x[:, 3].std(ddof=0) == pytest.approx(1.0)

    def test_general_constant_continuous_raises(self):
        with pytest.raises(ConstantContinuousColumn):
            build_general([("c", "continuous", np.ones(3))])

    def test_general_unknown_kind_raises(self):
        with pytest.raises(ValueError):
            build_general([("c", "ordinal", np.arange(3))])

    @given(st.lists(st.integers(min_value=1, max_value=4), min_size=4, max_size=20))
    @settings(max_examples=50, deadline=None)
    def test_one_hot_rows_sum_to_one(self, labels):
        labels = labels + list(range(1, max(labels) + 1))  # ensure every level occurs
        d = build_categorical(labels)
        assert np.array_equal(d.x.sum(axis=1), np.ones(len(labels)))


class TestPriorMarginalCov:
    def test_intercept_gives_compound_symmetry(self):
        d = build_intercept(5)
        gamma = np.array([[0.7, -0.2, 1.1]])
        t_trace = 0.8
        got = prior_marginal_cov(d, gamma, t_trace)
        c = float((gamma * gamma).sum())
        expect = (1.0 + t_trace) * np.eye(5) + c * np.ones((5, 5))
        assert np.abs(got - expect).max() < 1e-12

    def test_categorical_gives_block_structure(self):
        labels = [1, 1, 2, 2, 2]
        d = build_categorical(labels)
        rng = np.random.default_rng(0)
        gamma = rng.standard_normal((2, 3))
        got = prior_marginal_cov(d, gamma, 0.5)
        gg = gamma @ gamma.T
        expect = 1.5 * np.eye(5) + np.array(
            [[gg[a - 1, b - 1] for b in labels] for a in labels]
        )
        assert np.abs(got - expect).max() < 1e-12

    def test_matrix_variate_gives_label_additive_structure(self):
        d = build_matrix_variate(2, 2)
        rng = np.random.default_rng(1)
        gamma = rng.standard_normal((4, 2))
        got = prior_marginal_cov(d, gamma, 0.0)
        # off-diagonal entries depend only on the (row, column) label pair
        rows = [0, 1, 0, 1]
        cols = [0, 0, 1, 1]
        g_row, g_col = gamma[:2], gamma[2:]
        for i in range(4):
            for j in range(4):
                vi = g_row[rows[i]] + g_col[cols[i]]
                vj = g_row[rows[j]] + g_col[cols[j]]
                expect = float(vi @ vj) + (1.0 if i == j else 0.0)
                assert got[i, j] == pytest.approx(expect, abs=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_symmetric_with_floor_eigenvalue(self, seed):
        rng = np.random.default_rng(seed)
        labels = rng.integers(1, 4, size=8)
        labels[:3] = [1, 2, 3]
        d = build_categorical(labels)
        gamma = rng.standard_normal((3, 4))
        t_trace = float(rng.uniform(0, 2))
        got = prior_marginal_cov(d, gamma, t_trace)
        assert np.array_equal(got, got.T)
        assert np.linalg.eigvalsh(got).min() >= 1.0 + t_trace - 1e-8

    def test_rejects_negative_trace(self):
        with pytest.raises(ValueError):
            prior_marginal_cov(build_intercept(2), np.ones((1, 1)), -0.1)

    def test_rejects_gamma_mismatch(self):
        with pytest.raises(ValueError):
            prior_marginal_cov(build_intercept(2), np.ones((2, 1)), 0.0)


class TestMrcCovariate:
    def test_centered_on_labels(self):
        rng = RngStream(0, stream_id=50)
        g = np.repeat([1.0, 2.0, 3.0], 300)
        x = gen_mrc_covariate(rng, g, sd=0.25)
        for lvl in (1.0, 2.0, 3.0):
            vals = x[g == lvl]
            assert abs(vals.mean() - lvl) < 5 * 0.25 / np.sqrt(vals.size)
            assert abs(vals.std() - 0.25) < 0.05

    def test_rejects_bad_sd(self):
        with pytest.raises(ValueError):
            gen_mrc_covariate(RngStream(0), [1, 2], sd=0.0)
