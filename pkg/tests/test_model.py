"""Tests for the typed containers, centering, and state (de)serialization."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cmrcov.model import (
    ChainSummary,
    CmrState,
    ColumnFullyCensored,
    Dataset,
    Hyperparams,
    MetaDesign,
    center_dataset,
    default_hyperparams,
    empty_design,
    init_state,
    load_state,
    recompute_omega,
    save_state,
)
from cmrcov.randcore import RngStream


class TestDataset:
    def test_censoring_upper_is_centered_lod(self):
        d = Dataset(
            np.zeros((3, 2)),
            np.zeros((3, 2), dtype=bool),
            np.array([1.0, np.inf]),
            np.array([0.4, 2.0]),
        )
        upper = d.censoring_upper()
        assert upper[0] == pytest.approx(0.6)
        assert np.isinf(upper[1])

    def test_shape_properties(self):
        d = Dataset(np.zeros((5, 3)), np.zeros((5, 3), bool), np.full(3, np.inf), np.zeros(3))
        assert (d.n, d.p, d.has_censoring) == (5, 3, False)


class TestCenterDataset:
    def test_centers_on_uncensored_means(self):
        raw = np.array([[1.0, 10.0], [3.0, 30.0], [5.0, 20.0]])
        data = center_dataset(raw)
        assert np.allclose(data.column_means, [3.0, 20.0])
        assert np.allclose(data.y.mean(axis=0), 0.0)

    def test_censored_cells_prefilled_at_lod_over_sqrt2(self):
        raw = np.array([[0.1, 1.0], [2.0, 2.0], [4.0, 3.0]])
        censored = np.array([[True, False], [False, False], [False, False]])
        lod = np.array([0.5, np.inf])
        data = center_dataset(raw, censored, lod)
        # mean of column 0 uses only the two uncensored entries
        assert data.column_means[0] == pytest.approx(3.0)
        assert data.y[0, 0] == pytest.approx(0.5 / np.sqrt(2.0) - 3.0)

    def test_fully_censored_column_raises(self):
        raw = np.ones((3, 1))
        with pytest.raises(ColumnFullyCensored):
            center_dataset(raw, np.ones((3, 1), bool), np.array([1.0]))

    def test_censored_without_lod_raises(self):
        raw = np.ones((3, 1)) * np.arange(3)[:, None]
        with pytest.raises(ValueError):
            center_dataset(raw, np.array([[True], [False], [False]]))

    def test_standardize_flag(self):
        rng = np.random.default_rng(0)
        raw = rng.standard_normal((50, 3)) * np.array([1.0, 5.0, 0.2])
        data = center_dataset(raw, standardize=True)
        assert data.standardized
        assert np.allclose(data.y.std(axis=0, ddof=0), 1.0)

    def test_too_few_samples_raises(self):
        with pytest.raises(ValueError):
            center_dataset(np.ones((1, 2)))


class TestMetaDesign:
    def test_empty_design(self):
        d = empty_design(4)
        d.validate()
        assert (d.p, d.q, d.n_groups) == (4, 0, 0)

    def test_noncontiguous_groups_rejected(self):
        d = MetaDesign(np.ones((3, 2)), ["indicator", "indicator"], np.array([0, 2]))
        with pytest.raises(ValueError):
            d.validate()

    def test_nonbinary_indicator_rejected(self):
        d = MetaDesign(np.full((3, 1), 0.5), ["indicator"], np.array([0]))
        with pytest.raises(ValueError):
            d.validate()

    def test_metadata_length_mismatch_rejected(self):
        d = MetaDesign(np.ones((3, 2)), ["indicator"], np.array([0, 1]))
        with pytest.raises(ValueError):
            d.validate()


class TestHyperparams:
    def test_default_rank_grows_logarithmically(self):
        assert default_hyperparams(2).r == 2          # capped at p
        assert default_hyperparams(9).r == 9          # 5 + ceil(2 ln 9) = 10, capped
        assert default_hyperparams(50).r == 13        # 5 + ceil(2 ln 50) = 13
        assert default_hyperparams(1000).r == 19

    def test_validate_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            Hyperparams(a_d=0.0).validate()

    def test_validate_rejects_spike_above_slab_mode(self):
        # slab mode is b_theta / (a_theta + 1)
        with pytest.raises(ValueError):
            Hyperparams(a_theta=2.0, b_theta=2.0, theta_inf=0.7).validate()

    def test_validate_rejects_rank_above_p(self):
        with pytest.raises(ValueError):
            Hyperparams(r=5).validate(p=3)

    def test_overrides(self):
        hp = default_hyperparams(9, alpha=2.5, ridge_enabled=True)
        assert hp.alpha == 2.5 and hp.ridge_enabled


class TestOmega:
    def test_stick_breaking_arithmetic(self):
        omega = recompute_omega(np.array([0.5, 0.5, 1.0]))
        assert np.allclose(omega, [0.5, 0.25, 0.25])
        assert omega.sum() == pytest.approx(1.0)

    @given(
        st.lists(st.floats(min_value=1e-6, max_value=1.0 - 1e-6), min_size=1, max_size=12)
    )
    @settings(max_examples=100, deadline=None)
    def test_simplex_property(self, head):
        nu = np.array(head + [1.0])
        omega = recompute_omega(nu)
        assert np.all(omega >= 0)
        assert omega.sum() == pytest.approx(1.0, abs=1e-12)


class TestState:
    def make_state(self, seed=0, q=2, ridge=False):
        rng = RngStream(seed, stream_id=1)
        raw = rng.gen.standard_normal((8, 4))
        data = center_dataset(raw)
        x = np.ones((4, q)) if q else np.zeros((4, 0))
        design = (
            MetaDesign(x, ["continuous"] * q, np.arange(q)) if q else empty_design(4)
        )
        hp = Hyperparams(r=3, ridge_enabled=ridge)
        return init_state(rng, data, design, hp), hp

    def test_init_state_shapes_and_invariants(self):
        state, hp = self.make_state()
        assert state.lam.shape == (4, 3)
        assert state.gamma.shape == (2, 3)
        assert state.eta.shape == (8, 3)
        state.check_invariants(hp)

    def test_init_state_dimension_mismatch(self):
        rng = RngStream(0)
        data = center_dataset(np.random.default_rng(0).standard_normal((5, 3)))
        with pytest.raises(ValueError):
            init_state(rng, data, empty_design(4), Hyperparams(r=2))

    def test_invariant_catches_omega_drift(self):
        state, hp = self.make_state()
        state.omega = state.omega + 0.01
        with pytest.raises(AssertionError):
            state.check_invariants(hp)

    def test_invariant_catches_spike_theta_mismatch(self):
        state, hp = self.make_state()
        state.z = np.zeros(3, dtype=int)  # every column in the spike
        state.theta = np.full(3, 0.123)
        with pytest.raises(AssertionError):
            state.check_invariants(hp)

    def test_save_load_round_trip(self, tmp_path):
        state, _ = self.make_state(seed=5)
        path = tmp_path / "state.npz"
        save_state(path, state)
        back = load_state(path)
        for name in ("lam", "gamma", "d", "theta", "eta", "nu", "omega", "z", "l_scales"):
            assert np.array_equal(getattr(state, name), getattr(back, name)), name
        assert back.tau2 == state.tau2


class TestChainSummary:
    def test_mean_corr_normalizes_diagonal(self):
        cov = np.array([[4.0, 2.0], [2.0, 9.0]])
        s = ChainSummary(np.linalg.inv(cov), cov, np.zeros((2, 2)), np.zeros((2, 2)), 1, 0.95)
        corr = s.mean_corr
        assert np.allclose(np.diag(corr), 1.0)
        assert corr[0, 1] == pytest.approx(2.0 / 6.0)
