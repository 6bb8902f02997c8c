"""Population regimes, the method x dimension x sample-size grid, and the
detection-limit hold-out experiment."""
from __future__ import annotations

import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import designs, estimators
from .model import Dataset, center_dataset, default_hyperparams
from .randcore import RngStream, chol_psd
from .sampler import ChainConfig, run_chain

__all__ = [
    "Regime",
    "ExperimentRecord",
    "gen_sigma_cor",
    "gen_sigma_block",
    "gen_sigma_kron",
    "block_group_sizes",
    "run_grid",
    "lod_experiment",
    "METHODS",
]

METHODS = ("MLE", "MR.I", "MR.D", "MR.C", "CUSP", "Kron")


@dataclass
class Regime:
    kind: str                     # exchangeable | block | kronecker
    params: dict = field(default_factory=dict)

    def sigma(self, p: int) -> np.ndarray:
        if self.kind == "exchangeable":
            return gen_sigma_cor(p, self.params.get("rho", 0.9))
        if self.kind == "block":
            sizes = self.params.get("group_sizes") or block_group_sizes(p)
            return gen_sigma_block(
                p,
                sizes,
                self.params.get("within", 0.8),
                self.params.get("between", 0.3),
            )
        if self.kind == "kronecker":
            p1, p2 = self.params["p1"], self.params["p2"]
            if p1 * p2 != p:
                raise ValueError("kronecker regime needs p = p1*p2")
            return gen_sigma_kron(
                p1, p2, self.params.get("rho1", 0.9), self.params.get("rho2", 0.6)
            )
        raise ValueError(f"unknown regime kind {self.kind!r}")

    def group_labels(self, p: int) -> np.ndarray:
        if self.kind == "block":
            sizes = self.params.get("group_sizes") or block_group_sizes(p)
            return np.repeat(np.arange(1, len(sizes) + 1), sizes)
        raise ValueError("group labels only defined for the block regime")


@dataclass
class ExperimentRecord:
    regime: str
    method: str
    p: int
    n: int
    replicate: int
    seed: int
    stein_loss: float | None
    seconds: float
    active_factors: float | None = None
    error: str | None = None


def gen_sigma_cor(p: int, rho: float) -> np.ndarray:
    if not -1.0 / (p - 1) < rho < 1.0:
        raise ValueError(f"rho={rho} outside the positive-definite range for p={p}")
    return (1.0 - rho) * np.eye(p) + rho * np.ones((p, p))


def block_group_sizes(p: int) -> list[int]:
    """Three group sizes proportional to (2, 3, 4)/9, summing to p."""
    raw = np.array([2, 3, 4]) * p / 9.0
    sizes = np.floor(raw).astype(int)
    sizes = np.maximum(sizes, 1)
    while sizes.sum() < p:
        sizes[np.argmax(raw - sizes)] += 1
    while sizes.sum() > p:
        sizes[np.argmax(sizes)] -= 1
    return sizes.tolist()


def gen_sigma_block(
    p: int, group_sizes, within: float, between: float
) -> np.ndarray:
    sizes = list(group_sizes)
    if sum(sizes) != p:
        raise ValueError("group sizes must sum to p")
    labels = np.repeat(np.arange(len(sizes)), sizes)
    same = labels[:, None] == labels[None, :]
    sigma = np.where(same, within, between)
    np.fill_diagonal(sigma, 1.0)
    chol_psd(sigma, jitter_max=0.0)  # raises NotPositiveDefinite if invalid
    return sigma


def gen_sigma_kron(p1: int, p2: int, rho1: float, rho2: float) -> np.ndarray:
    """Column-major variable order: Cov(vec Y) = C(p2, rho2) ⊗ R(p1, rho1)."""
    return np.kron(gen_sigma_cor(p2, rho2), gen_sigma_cor(p1, rho1))


def _method_design(method: str, regime: Regime, p: int, rng: RngStream):
    """Design matrix for a CMR-family method, or None for non-MCMC methods."""
    if method == "MR.I":
        return designs.build_intercept(p)
    if method == "MR.D":
        if regime.kind == "kronecker":
            return designs.build_matrix_variate(regime.params["p1"], regime.params["p2"])
        return designs.build_categorical(regime.group_labels(p))
    if method == "MR.C":
        g = regime.group_labels(p)
        x = designs.gen_mrc_covariate(rng, g, sd=0.25)
        return designs.build_general([("score", "continuous", x)], standardize=False)
    if method == "CUSP":
        return None
    raise ValueError(f"no design for method {method}")


def _fit_method(
    method: str,
    regime: Regime,
    y: np.ndarray,
    rng: RngStream,
    chain_seed: int,
    chain_config: ChainConfig,
) -> tuple[np.ndarray, float | None]:
    """Return (covariance estimate, mean active-factor count or None)."""
    n, p = y.shape
    if method == "MLE":
        return estimators.sample_covariance(y), None
    if method == "Kron":
        p1, p2 = regime.params["p1"], regime.params["p2"]
        mats = y.reshape(n, p2, p1).transpose(0, 2, 1)  # column-major unvec
        fit = estimators.flip_flop_mle(mats)
        return fit.full(), None
    data = center_dataset(y)
    hp = default_hyperparams(p)
    cfg = ChainConfig(
        n_iter=chain_config.n_iter,
        burn_in=chain_config.burn_in,
        thin=chain_config.thin,
        seed=chain_seed,
        ci_level=chain_config.ci_level,
        model_variant="cusp_baseline" if method == "CUSP" else "cmr",
        spike_covariance=chain_config.spike_covariance,
    )
    design = _method_design(method, regime, p, rng.substream(3))
    if design is None:
        from .model import empty_design

        design = empty_design(p)
    summary, _ = run_chain(data, design, hp, cfg)
    est = estimators.stein_bayes_estimate(summary)
    active = float(summary.active_factors_trace.mean())
    return est, active


def _cell_stream_id(regime: Regime, p: int, n: int, rep: int) -> int:
    return zlib.crc32(f"{regime.kind}|{p}|{n}|{rep}".encode())


def _run_cell(args) -> list[ExperimentRecord]:
    (regime, methods, p, n, rep, master_seed, chain_config) = args
    cell_id = _cell_stream_id(regime, p, n, rep)
    rng = RngStream(master_seed, stream_id=cell_id)
    sigma = regime.sigma(p)
    cf = chol_psd(sigma)
    y = rng.gen.standard_normal((n, p)) @ cf.lower.T
    y = y - y.mean(axis=0)
    records = []
    for k, method in enumerate(methods):
        start = time.perf_counter()
        try:
            est, active = _fit_method(
                method,
                regime,
                y,
                rng.substream(1),
                chain_seed=(master_seed * 0x10001 + cell_id * 64 + k)
                & 0xFFFFFFFFFFFFFFFF,
                chain_config=chain_config,
            )
            loss = estimators.stein_loss(sigma, est)
            err = None
        except Exception as exc:  # noqa: BLE001 - per-record capture, grid continues
            loss, active, err = None, None, f"{type(exc).__name__}: {exc}"
        records.append(
            ExperimentRecord(
                regime=regime.kind,
                method=method,
                p=p,
                n=n,
                replicate=rep,
                seed=cell_id,
                stein_loss=loss,
                seconds=time.perf_counter() - start,
                active_factors=active,
                error=err,
            )
        )
    return records


def resolve_n(p: int, rule: str) -> int:
    if rule == "p+1":
        return p + 1
    if rule == "1.5p":
        return round(1.5 * p)
    if rule == "3p":
        return 3 * p
    return int(rule)


def run_grid(
    master_seed: int,
    regimes: list[Regime],
    methods: list[str],
    p_list: list[int],
    n_rules: list[str],
    n_replicates: int,
    chain_config: ChainConfig,
    workers: int = 1,
) -> list[ExperimentRecord]:
    """Paired simulation grid: every method in a replicate sees the same data."""
    for m in methods:
        if m not in METHODS:
            raise ValueError(f"unknown method {m!r}; valid: {', '.join(METHODS)}")
    cells = []
    for regime in regimes:
        usable = [m for m in methods if _applicable(m, regime)]
        for p in p_list:
            for rule in n_rules:
                n = resolve_n(p, rule)
                for rep in range(n_replicates):
                    cells.append((regime, usable, p, n, rep, master_seed, chain_config))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            nested = list(pool.map(_run_cell, cells))
    else:
        nested = [_run_cell(c) for c in cells]
    records = [rec for group in nested for rec in group]
    records.sort(key=lambda r: (r.regime, r.p, r.n, r.replicate, r.method))
    return records


def _applicable(method: str, regime: Regime) -> bool:
    if method == "Kron":
        return regime.kind == "kronecker"
    if method == "MR.D":
        return regime.kind in ("block", "kronecker")
    if method == "MR.C":
        return regime.kind == "block"
    return True


def summarize_records(records: list[ExperimentRecord]) -> dict:
    """Per-cell quantiles of the loss, JSON-ready."""
    cells: dict[tuple, list[float]] = {}
    for r in records:
        if r.stein_loss is None:
            continue
        cells.setdefault((r.regime, r.method, r.p, r.n), []).append(r.stein_loss)
    out = []
    for (regime, method, p, n), losses in sorted(cells.items()):
        q = np.quantile(losses, [0.25, 0.5, 0.75])
        out.append(
            {
                "regime": regime,
                "method": method,
                "p": p,
                "n": n,
                "replicates": len(losses),
                "loss_q25": q[0],
                "loss_median": q[1],
                "loss_q75": q[2],
            }
        )
    return {"cells": out}


def make_lod_holdout(
    y_raw: np.ndarray, n_test: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Mask the n_test smallest entries per column; the detection limit is the
    midpoint between the largest held-out and smallest retained value.

    Ties resolve by stable ascending (value, row) order. Returns
    (mask, lod, truth) with truth listing held-out values column-major.
    """
    y_raw = np.asarray(y_raw, dtype=float)
    n, p = y_raw.shape
    if n_test < 1 or n_test >= n / 2:
        raise ValueError("need 1 <= n_test < n/2")
    mask = np.zeros((n, p), dtype=bool)
    lod = np.empty(p)
    for j in range(p):
        order = np.argsort(y_raw[:, j], kind="stable")
        test_rows = order[:n_test]
        mask[test_rows, j] = True
        largest_test = y_raw[order[n_test - 1], j]
        smallest_train = y_raw[order[n_test], j]
        lod[j] = 0.5 * (largest_test + smallest_train)
    truth = y_raw.T[mask.T]
    return mask, lod, truth


def lod_experiment(
    y_raw: np.ndarray,
    n_test_list: list[int],
    methods: list[str],
    chain_config: ChainConfig,
    design=None,
    master_seed: int = 0,
) -> list[dict]:
    """RMSE of held-out below-limit values for each (n_test, method) pair.

    methods: "naive" (LOD/sqrt(2) fill), "cmr-intercept", "cmr" (needs design).
    """
    y_raw = np.asarray(y_raw, dtype=float)
    n, p = y_raw.shape
    results = []
    for n_test in n_test_list:
        mask, lod, truth = make_lod_holdout(y_raw, n_test)
        pct = 100.0 * (n - n_test) / n
        for method in methods:
            start = time.perf_counter()
            if method == "naive":
                filled = estimators.single_impute_lod(y_raw, mask, lod)
                imputed = filled.T[mask.T]
            elif method in ("cmr", "cmr-intercept"):
                if method == "cmr":
                    if design is None:
                        raise ValueError("method 'cmr' needs a meta design")
                    dsg = design
                else:
                    dsg = designs.build_intercept(p)
                data = center_dataset(y_raw, mask, lod)
                hp = default_hyperparams(p)
                cfg = ChainConfig(
                    n_iter=chain_config.n_iter,
                    burn_in=chain_config.burn_in,
                    thin=chain_config.thin,
                    seed=master_seed + 1000 * n_test + (1 if method == "cmr" else 0),
                    ci_level=chain_config.ci_level,
                    spike_covariance=chain_config.spike_covariance,
                )
                summary, _ = run_chain(data, dsg, hp, cfg)
                imputed = np.array(
                    [
                        summary.imputed_mean[(i, j)]
                        for j in range(p)
                        for i in np.flatnonzero(mask[:, j])
                    ]
                )
            else:
                raise ValueError(f"unknown imputation method {method!r}")
            results.append(
                {
                    "n_test": n_test,
                    "pct_detected": pct,
                    "method": method,
                    "rmse": estimators.rmse(truth, imputed),
                    "seconds": time.perf_counter() - start,
                }
            )
    return results
