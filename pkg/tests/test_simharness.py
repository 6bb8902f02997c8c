"""Tests for the population regimes, the simulation grid, and the
detection-limit hold-out experiment."""
import numpy as np
import pytest

from cmrcov.estimators import rmse, single_impute_lod
from cmrcov.randcore import NotPositiveDefinite, chol_psd
from cmrcov.sampler import ChainConfig
from cmrcov.simharness import (
    METHODS,
    Regime,
    _applicable,
    block_group_sizes,
    gen_sigma_block,
    gen_sigma_cor,
    gen_sigma_kron,
    lod_experiment,
    make_lod_holdout,
    resolve_n,
    run_grid,
    summarize_records,
)

FAST_CHAIN = ChainConfig(n_iter=120, burn_in=40, thin=1)


class TestPopulations:
    def test_exchangeable_structure(self):
        s = gen_sigma_cor(4, 0.9)
        assert np.allclose(np.diag(s), 1.0)
        off = s[~np.eye(4, dtype=bool)]
        assert np.allclose(off, 0.9)

    def test_exchangeable_rho_range(self):
        with pytest.raises(ValueError):
            gen_sigma_cor(4, 1.0)
        with pytest.raises(ValueError):
            gen_sigma_cor(4, -0.5)  # below -1/(p-1)

    def test_block_sizes_proportional(self):
        assert block_group_sizes(9) == [2, 3, 4]
        assert sum(block_group_sizes(16)) == 16
        assert sum(block_group_sizes(50)) == 50
        assert block_group_sizes(50) == [11, 17, 22]

    def test_block_structure(self):
        s = gen_sigma_block(9, [2, 3, 4], within=0.8, between=0.3)
        assert s[0, 1] == 0.8 and s[0, 2] == 0.3
        assert np.allclose(np.diag(s), 1.0)

    def test_block_rejects_bad_sizes(self):
        with pytest.raises(ValueError):
            gen_sigma_block(9, [2, 3], within=0.8, between=0.3)

    def test_block_rejects_indefinite(self):
        with pytest.raises(NotPositiveDefinite):
            gen_sigma_block(6, [3, 3], within=0.1, between=0.9)

    def test_kron_is_kronecker_of_exchangeables(self):
        s = gen_sigma_kron(2, 3, 0.9, 0.6)
        expect = np.kron(gen_sigma_cor(3, 0.6), gen_sigma_cor(2, 0.9))
        assert np.array_equal(s, expect)

    @pytest.mark.parametrize(
        "regime,p",
        [
            (Regime("exchangeable", {"rho": 0.9}), 9),
            (Regime("block"), 9),
            (Regime("kronecker", {"p1": 2, "p2": 4}), 8),
        ],
    )
    def test_every_sigma_is_pd_without_jitter(self, regime, p):
        chol_psd(regime.sigma(p), jitter_max=0.0)

    def test_kron_regime_requires_matching_p(self):
        with pytest.raises(ValueError):
            Regime("kronecker", {"p1": 2, "p2": 4}).sigma(9)

    def test_group_labels_block_only(self):
        assert np.array_equal(Regime("block").group_labels(9), [1, 1, 2, 2, 2, 3, 3, 3, 3])
        with pytest.raises(ValueError):
            Regime("exchangeable").group_labels(9)


class TestGridMechanics:
    def test_resolve_n_rules(self):
        assert resolve_n(9, "p+1") == 10
        assert resolve_n(9, "1.5p") == 14  # round-to-even at 13.5
        assert resolve_n(9, "3p") == 27
        assert resolve_n(9, "40") == 40

    def test_applicability_filter(self):
        cor = Regime("exchangeable", {"rho": 0.9})
        kron = Regime("kronecker", {"p1": 2, "p2": 4})
        assert not _applicable("Kron", cor)
        assert not _applicable("MR.D", cor)
        assert _applicable("MR.D", kron)
        assert not _applicable("MR.C", kron)
        assert all(_applicable(m, cor) for m in ("MLE", "MR.I", "CUSP"))

    def test_unknown_method_rejected(self):
        with pytest.raises(ValueError):
            run_grid(0, [Regime("exchangeable")], ["MLE", "XXX"], [4], ["3p"], 1, FAST_CHAIN)

    def test_records_reproducible_bit_for_bit(self):
        args = (
            7,
            [Regime("exchangeable", {"rho": 0.7})],
            ["MLE", "MR.I"],
            [4],
            ["3p"],
            2,
            FAST_CHAIN,
        )
        a = run_grid(*args)
        b = run_grid(*args)
        assert [r.stein_loss for r in a] == [r.stein_loss for r in b]
        assert [(r.method, r.replicate, r.seed) for r in a] == [
            (r.method, r.replicate, r.seed) for r in b
        ]

    def test_paired_methods_share_data(self):
        """Within a replicate every method carries the same cell seed, and the
        deterministic MLE of the shared data is identical across orderings."""
        regime = Regime("exchangeable", {"rho": 0.7})
        a = run_grid(3, [regime], ["MLE", "MR.I"], [4], ["3p"], 1, FAST_CHAIN)
        b = run_grid(3, [regime], ["MLE"], [4], ["3p"], 1, FAST_CHAIN)
        mle_a = next(r for r in a if r.method == "MLE")
        mle_b = next(r for r in b if r.method == "MLE")
        assert mle_a.seed == mle_b.seed
        assert mle_a.stein_loss == mle_b.stein_loss

    def test_failed_cells_recorded_not_raised(self):
        # Kron on a 3x3 grid with n=1 is singular; the record carries the error
        regime = Regime("kronecker", {"p1": 3, "p2": 3})
        recs = run_grid(0, [regime], ["Kron"], [9], ["1"], 1, FAST_CHAIN)
        assert len(recs) == 1
        assert recs[0].stein_loss is None
        assert "Singular" in recs[0].error

    def test_summarize_records_quartiles(self):
        recs = run_grid(
            5, [Regime("exchangeable", {"rho": 0.8})], ["MLE"], [3], ["3p"], 5, FAST_CHAIN
        )
        out = summarize_records(recs)
        (cell,) = out["cells"]
        losses = sorted(r.stein_loss for r in recs)
        assert cell["replicates"] == 5
        assert cell["loss_median"] == pytest.approx(losses[2])
        assert cell["loss_q25"] <= cell["loss_median"] <= cell["loss_q75"]

    def test_parallel_matches_serial(self):
        args = (
            11,
            [Regime("exchangeable", {"rho": 0.6})],
            ["MLE"],
            [4, 6],
            ["3p"],
            3,
            FAST_CHAIN,
        )
        serial = run_grid(*args, workers=1)
        parallel = run_grid(*args, workers=2)
        assert [r.stein_loss for r in serial] == [r.stein_loss for r in parallel]


class TestLodHoldout:
    def test_mask_counts_and_midpoint_limits(self):
        rng = np.random.default_rng(0)
        y = rng.standard_normal((20, 3))
        mask, lod, truth = make_lod_holdout(y, 4)
        assert np.array_equal(mask.sum(axis=0), [4, 4, 4])
        for j in range(3):
            held = np.sort(y[mask[:, j], j])
            kept = np.sort(y[~mask[:, j], j])
            assert held[-1] < lod[j] < kept[0]
            assert lod[j] == pytest.approx(0.5 * (held[-1] + kept[0]))
        assert truth.size == 12
        # truth is listed column-major and below the column's limit
        assert np.all(truth < np.repeat(lod, 4) + 1e-12)

    def test_tie_break_is_stable_by_row(self):
        y = np.zeros((6, 1))
        y[3:] = 1.0
        mask, _, _ = make_lod_holdout(y, 2)
        assert np.array_equal(np.flatnonzero(mask[:, 0]), [0, 1])

    def test_rejects_oversized_test_set(self):
        with pytest.raises(ValueError):
            make_lod_holdout(np.zeros((10, 2)), 5)

    def test_naive_rmse_matches_hand_computation(self):
        rng = np.random.default_rng(1)
        y = rng.standard_normal((16, 2)) + 5.0
        out = lod_experiment(y, [3], ["naive"], FAST_CHAIN)
        (row,) = out
        mask, lod, truth = make_lod_holdout(y, 3)
        filled = single_impute_lod(y, mask, lod)
        want = rmse(truth, filled.T[mask.T])
        assert row["rmse"] == pytest.approx(want)
        assert row["pct_detected"] == pytest.approx(100.0 * 13 / 16)

    def test_cmr_intercept_runs_and_is_deterministic(self):
        rng = np.random.default_rng(2)
        y = rng.standard_normal((14, 3)) + 4.0
        a = lod_experiment(y, [2], ["cmr-intercept"], FAST_CHAIN, master_seed=9)
        b = lod_experiment(y, [2], ["cmr-intercept"], FAST_CHAIN, master_seed=9)
        assert a[0]["rmse"] == b[0]["rmse"]

    def test_cmr_without_design_raises(self):
        with pytest.raises(ValueError):
            lod_experiment(np.zeros((10, 2)), [2], ["cmr"], FAST_CHAIN)

    def test_unknown_method_raises(self):
        with pytest.raises(ValueError):
            lod_experiment(np.zeros((10, 2)), [2], ["mice"], FAST_CHAIN)


def test_method_registry_is_stable():
    assert METHODS == ("MLE", "MR.I", "MR.D", "MR.C", "CUSP", "Kron")
