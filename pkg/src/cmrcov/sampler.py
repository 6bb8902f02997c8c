"""Gibbs sampler for the meta-covariate shrinkage factor model.

One sweep updates, in order: latent factors, censored-value imputation,
residual variances, loadings, the loading-scale tau^2, the stick-breaking
spike/slab block on the column scales, the meta coefficients, and (optionally)
the group-ridge scales. The coefficient matrix is refreshed immediately after
the spike/slab block because that block integrates it out; drawing it right
away keeps the sweep a valid partially-collapsed Gibbs scheme.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from .model import (
    ChainSummary,
    CmrState,
    Dataset,
    Hyperparams,
    MetaDesign,
    empty_design,
    init_state,
    recompute_omega,
)
from .randcore import (
    RngStream,
    chol_psd,
    log_mvn_pdf,
    log_mvt_pdf,
    sample_categorical_log,
    sample_inverse_gamma,
    sample_truncnorm_upper,
    woodbury_precision,
)

__all__ = [
    "ChainConfig",
    "SamplerError",
    "step_eta",
    "step_d",
    "step_lambda",
    "step_gamma",
    "step_tau2",
    "step_cusp",
    "step_ridge",
    "step_impute",
    "gibbs_sweep",
    "run_chain",
]

THETA_FLOOR = 1e-12


class SamplerError(Exception):
    def __init__(self, iteration: int, cause: Exception):
        super().__init__(f"sampler failed at iteration {iteration}: {cause}")
        self.iteration = iteration
        self.cause = cause


@dataclass
class ChainConfig:
    n_iter: int = 4000
    burn_in: int = 2000
    thin: int = 1
    seed: int = 0
    save_chain: bool = False
    cusp_enabled: bool = True
    model_variant: str = "cmr"  # "cmr" | "cusp_baseline"
    ci_level: float = 0.95
    # "model": spike density uses the column prior scale theta_inf*(XLX^T + tau^2 D);
    # "printed": theta_inf * I_p. The former keeps the spike/slab block coherent
    # with the rest of the model.
    spike_covariance: str = "model"

    def validate(self) -> None:
        if not (0 <= self.burn_in < self.n_iter):
            raise ValueError("need 0 <= burn_in < n_iter")
        if self.thin < 1:
            raise ValueError("thin must be positive")
        if (self.n_iter - self.burn_in) // self.thin < 1:
            raise ValueError("configuration keeps no draws")
        if self.model_variant not in ("cmr", "cusp_baseline"):
            raise ValueError(f"unknown model variant {self.model_variant!r}")
        if self.spike_covariance not in ("model", "printed"):
            raise ValueError(f"unknown spike covariance mode {self.spike_covariance!r}")


def step_eta(rng: RngStream, state: CmrState, data: Dataset) -> None:
    """eta_i ~ N_r(S^-1 Lam' D^-1 y_i, S^-1), S = Lam' D^-1 Lam + I_r."""
    r = state.r
    b = state.lam.T / state.d[None, :]          # r x p, Lam' D^-1
    s = b @ state.lam + np.eye(r)
    cf = chol_psd(s)
    means = cho_solve((cf.lower, True), b @ data.y.T)   # r x n
    z = rng.gen.standard_normal((r, data.n))
    draws = means + solve_triangular(cf.lower, z, lower=True, trans="T")
    state.eta = draws.T


def step_d(
    rng: RngStream, state: CmrState, data: Dataset, design: MetaDesign, hp: Hyperparams
) -> None:
    n, r = data.n, state.r
    resid = data.y - state.eta @ state.lam.T
    ss = np.einsum("ij,ij->j", resid, resid)
    prior_mean = design.x @ state.gamma if design.q else 0.0
    dev = state.lam - prior_mean
    prior_quad = (dev * dev / (state.tau2 * state.theta)[None, :]).sum(axis=1)
    s_d = ss + prior_quad + hp.b_d
    state.d = sample_inverse_gamma(rng, 0.5 * (n + r + hp.a_d), 0.5 * s_d)


def step_lambda(
    rng: RngStream, state: CmrState, data: Dataset, design: MetaDesign, hp: Hyperparams
) -> None:
    r = state.r
    theta_prec = 1.0 / (state.tau2 * state.theta)
    s_lam = np.diag(theta_prec) + state.eta.T @ state.eta
    cf = chol_psd(s_lam)
    prior_mean = design.x @ state.gamma if design.q else np.zeros((data.p, r))
    a = prior_mean * theta_prec[None, :] + data.y.T @ state.eta
    mean = cho_solve((cf.lower, True), a.T).T
    e = rng.gen.standard_normal((data.p, r))
    noise = solve_triangular(cf.lower, e.T, lower=True, trans="T").T
    state.lam = mean + np.sqrt(state.d)[:, None] * noise


def step_gamma(
    rng: RngStream, state: CmrState, design: MetaDesign, hp: Hyperparams
) -> None:
    q, r = design.q, state.r
    if q == 0:
        return
    x = design.x
    if hp.ridge_enabled:
        l_inv = np.diag(1.0 / state.l_scales[design.ridge_group])
    else:
        l_inv = np.eye(q)
    s_g = x.T @ (x / state.d[:, None]) / state.tau2 + l_inv
    cf = chol_psd(s_g)
    mean = cho_solve((cf.lower, True), x.T @ (state.lam / state.d[:, None]) / state.tau2)
    e = rng.gen.standard_normal((q, r))
    noise = solve_triangular(cf.lower, e, lower=True, trans="T")
    state.gamma = mean + noise * np.sqrt(state.theta)[None, :]


def step_tau2(
    rng: RngStream, state: CmrState, design: MetaDesign, hp: Hyperparams
) -> None:
    p, r = state.lam.shape
    prior_mean = design.x @ state.gamma if design.q else 0.0
    dev = state.lam - prior_mean
    s_tau = float((dev * dev / state.d[:, None] / state.theta[None, :]).sum()) + hp.b_tau
    state.tau2 = sample_inverse_gamma(rng, 0.5 * (p * r + hp.a_tau), 0.5 * s_tau)


def _column_prior_scale(
    state: CmrState, design: MetaDesign, hp: Hyperparams
) -> np.ndarray:
    """XLX^T + tau^2 D: per-unit-theta covariance of a loadings column with the
    coefficient column integrated out."""
    p = state.d.size
    m = state.tau2 * np.diag(state.d)
    if design.q:
        l_diag = (
            state.l_scales[design.ridge_group] if hp.ridge_enabled else np.ones(design.q)
        )
        m = m + (design.x * l_diag[None, :]) @ design.x.T
    return m


def step_cusp(
    rng: RngStream,
    state: CmrState,
    data: Dataset,
    design: MetaDesign,
    hp: Hyperparams,
    spike_covariance: str = "model",
) -> None:
    """Spike/slab label, stick-breaking, and column-scale updates, with the
    meta coefficients integrated out of the label and scale conditionals."""
    p = data.p
    r = state.r
    m = _column_prior_scale(state, design, hp)
    m_chol = chol_psd(m)
    slab_chol = chol_psd((hp.b_theta / hp.a_theta) * m)
    if spike_covariance == "model":
        spike_chol = chol_psd(hp.theta_inf * m)
    else:
        spike_chol = chol_psd(hp.theta_inf * np.eye(p))
    zero = np.zeros(p)
    log_omega = np.log(np.maximum(state.omega, np.finfo(float).tiny))

    for h in range(r):
        col = state.lam[:, h]
        spike_ld = log_mvn_pdf(col, zero, spike_chol)
        slab_ld = log_mvt_pdf(col, 2.0 * hp.a_theta, slab_chol)
        lw = log_omega + np.where(np.arange(r) <= h, spike_ld, slab_ld)
        state.z[h] = sample_categorical_log(rng, lw)

    idx = np.arange(r)
    eq = np.bincount(state.z, minlength=r)
    gt = np.array([(state.z > l).sum() for l in idx])
    nu = state.nu.copy()
    for l in range(r - 1):
        nu[l] = rng.gen.beta(1.0 + eq[l], hp.alpha + gt[l])
    nu[r - 1] = 1.0
    state.nu = nu
    state.omega = recompute_omega(nu)

    spike = state.z <= idx
    theta = np.empty(r)
    theta[spike] = hp.theta_inf
    for h in np.flatnonzero(~spike):
        w = solve_triangular(m_chol.lower, state.lam[:, h], lower=True)
        quad = float(w @ w)
        theta[h] = sample_inverse_gamma(
            rng, hp.a_theta + 0.5 * p, hp.b_theta + 0.5 * quad
        )
    state.theta = np.maximum(theta, THETA_FLOOR)


def step_ridge(
    rng: RngStream, state: CmrState, design: MetaDesign, hp: Hyperparams
) -> None:
    if not hp.ridge_enabled or design.q == 0:
        return
    r = state.r
    scales = np.empty(design.n_groups)
    for i in range(design.n_groups):
        rows = design.ridge_group == i
        n_i = int(rows.sum())
        g = state.gamma[rows]
        tr = float((g * g / state.theta[None, :]).sum())
        scales[i] = sample_inverse_gamma(rng, 0.5 * (1 + n_i * r), 0.5 * (tr + 1.0))
    state.l_scales = scales


def step_impute(rng: RngStream, state: CmrState, data: Dataset) -> None:
    """Redraw censored entries from their truncated-normal full conditional."""
    if not data.has_censoring:
        return
    rows, cols = np.nonzero(data.censored)
    mu = np.einsum("ij,ij->i", state.eta[rows], state.lam[cols])
    sd = np.sqrt(state.d[cols])
    upper = data.censoring_upper()[cols]
    data.y[rows, cols] = sample_truncnorm_upper(rng, mu, sd, upper)


def gibbs_sweep(
    rng: RngStream,
    state: CmrState,
    data: Dataset,
    design: MetaDesign,
    hp: Hyperparams,
    config: ChainConfig,
) -> None:
    step_eta(rng, state, data)
    step_impute(rng, state, data)
    step_d(rng, state, data, design, hp)
    step_lambda(rng, state, data, design, hp)
    step_tau2(rng, state, design, hp)
    if config.cusp_enabled:
        step_cusp(rng, state, data, design, hp, config.spike_covariance)
    step_gamma(rng, state, design, hp)
    step_ridge(rng, state, design, hp)


class _P2Quantile:
    """Vectorized P-square streaming quantile estimator, one per element."""

    def __init__(self, q: float, n_elems: int):
        self.q = q
        self.m = n_elems
        self._buf: list[np.ndarray] = []
        self.heights = None

    def update(self, x: np.ndarray) -> None:
        x = np.asarray(x, dtype=float).ravel()
        if self.heights is None:
            self._buf.append(x)
            if len(self._buf) == 5:
                first = np.sort(np.stack(self._buf, axis=1), axis=1)
                self.heights = first
                self.pos = np.tile(np.arange(1.0, 6.0), (self.m, 1))
                self.count = 5
            return
        q = self.q
        h, pos = self.heights, self.pos
        self.count += 1
        k = np.sum(x[:, None] >= h, axis=1)  # cell index 0..5
        below = k == 0
        h[below, 0] = x[below]
        k = np.clip(k, 1, 4)
        above = x >= h[:, 4]
        h[above, 4] = x[above]
        incr = np.arange(1, 6)[None, :] > k[:, None]
        pos += incr
        n = self.count
        desired = 1.0 + (n - 1) * np.array([0.0, q / 2, q, (1 + q) / 2, 1.0])[None, :]
        for i in (1, 2, 3):
            d = desired[:, i] - pos[:, i]
            move_up = (d >= 1) & (pos[:, i + 1] - pos[:, i] > 1)
            move_dn = (d <= -1) & (pos[:, i - 1] - pos[:, i] < -1)
            for sign, mask in ((1.0, move_up), (-1.0, move_dn)):
                if not mask.any():
                    continue
                hi = h[mask]
                pi = pos[mask]
                dp1 = pi[:, i + 1] - pi[:, i]
                dm1 = pi[:, i - 1] - pi[:, i]
                # parabolic prediction, linear fallback when non-monotone
                para = hi[:, i] + sign / (dp1 - dm1) * (
                    (pi[:, i] - pi[:, i - 1] + sign) * (hi[:, i + 1] - hi[:, i]) / dp1
                    + (pi[:, i + 1] - pi[:, i] - sign) * (hi[:, i] - hi[:, i - 1]) / (-dm1)
                )
                ok = (para > hi[:, i - 1]) & (para < hi[:, i + 1])
                lin_target = np.where(sign > 0, hi[:, i + 1], hi[:, i - 1])
                lin_dp = np.where(sign > 0, dp1, dm1)
                lin = hi[:, i] + sign * (lin_target - hi[:, i]) / lin_dp
                hnew = np.where(ok, para, lin)
                rows = np.flatnonzero(mask)
                h[rows, i] = hnew
                pos[rows, i] += sign

    def result(self) -> np.ndarray:
        if self.heights is None:
            data = np.stack(self._buf, axis=1) if self._buf else np.zeros((self.m, 1))
            return np.quantile(data, self.q, axis=1)
        return self.heights[:, 2].copy()


FULL_STORE_MAX_P = 64


def run_chain(
    data: Dataset,
    design: MetaDesign,
    hp: Hyperparams,
    config: ChainConfig,
) -> tuple[ChainSummary, list[dict] | None]:
    """Run one chain; accumulate the posterior functionals the estimators need."""
    config.validate()
    if config.model_variant == "cusp_baseline":
        design = empty_design(data.p)
    design.validate()
    if design.p != data.p:
        raise ValueError("design rows must match data columns")
    # imputation rewrites censored cells in place; work on a copy so reruns
    # with the same seed start from identical fills
    data = Dataset(
        data.y.copy(), data.censored, data.lod, data.column_means, data.standardized
    )
    p = data.p
    rng = RngStream(config.seed, stream_id=1)
    state = init_state(rng, data, design, hp)

    prec_sum = np.zeros((p, p))
    cov_sum = np.zeros((p, p))
    lo_level = 0.5 * (1.0 - config.ci_level)
    full_store = p <= FULL_STORE_MAX_P
    corr_draws: list[np.ndarray] = []
    iu = np.triu_indices(p, k=1)
    p2_lo = _P2Quantile(lo_level, iu[0].size) if not full_store else None
    p2_hi = _P2Quantile(1.0 - lo_level, iu[0].size) if not full_store else None
    cens_idx = np.nonzero(data.censored)
    imput_sum = np.zeros(cens_idx[0].size)
    active_trace = []
    chain: list[dict] | None = [] if config.save_chain else None
    n_kept = 0

    for it in range(config.n_iter):
        try:
            gibbs_sweep(rng, state, data, design, hp, config)
        except Exception as exc:  # noqa: BLE001 - annotate with iteration and rethrow
            raise SamplerError(it, exc) from exc
        if it < config.burn_in or (it - config.burn_in) % config.thin:
            continue
        n_kept += 1
        prec, _ = woodbury_precision(state.d, state.lam)
        prec_sum += prec
        sigma = np.diag(state.d) + state.lam @ state.lam.T
        cov_sum += sigma
        sd = np.sqrt(np.diag(sigma))
        corr = sigma / np.outer(sd, sd)
        if full_store:
            corr_draws.append(corr[iu])
        else:
            p2_lo.update(corr[iu])
            p2_hi.update(corr[iu])
        if imput_sum.size:
            imput_sum += data.y[cens_idx]
        active_trace.append(int(np.sum(state.theta != hp.theta_inf)))
        if chain is not None:
            chain.append(
                {
                    "lam": state.lam.copy(),
                    "gamma": state.gamma.copy(),
                    "d": state.d.copy(),
                    "theta": state.theta.copy(),
                    "tau2": state.tau2,
                    "omega": state.omega.copy(),
                    "z": state.z.copy(),
                }
            )

    mean_precision = prec_sum / n_kept
    mean_cov = cov_sum / n_kept
    corr_lo = np.ones((p, p))
    corr_hi = np.ones((p, p))
    if full_store:
        stacked = np.stack(corr_draws, axis=0)
        lo_vals = np.quantile(stacked, lo_level, axis=0)
        hi_vals = np.quantile(stacked, 1.0 - lo_level, axis=0)
    else:
        lo_vals = p2_lo.result()
        hi_vals = p2_hi.result()
    corr_lo[iu] = lo_vals
    corr_lo[(iu[1], iu[0])] = lo_vals
    corr_hi[iu] = hi_vals
    corr_hi[(iu[1], iu[0])] = hi_vals

    imputed_mean = {}
    if imput_sum.size:
        means = imput_sum / n_kept + data.column_means[cens_idx[1]]
        imputed_mean = {
            (int(i), int(j)): float(v)
            for i, j, v in zip(cens_idx[0], cens_idx[1], means)
        }

    summary = ChainSummary(
        mean_precision=0.5 * (mean_precision + mean_precision.T),
        mean_cov=0.5 * (mean_cov + mean_cov.T),
        corr_lo=corr_lo,
        corr_hi=corr_hi,
        n_kept=n_kept,
        ci_level=config.ci_level,
        imputed_mean=imputed_mean,
        active_factors_trace=np.asarray(active_trace),
    )
    return summary, chain
