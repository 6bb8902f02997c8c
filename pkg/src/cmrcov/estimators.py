"""Point estimators, losses, and non-Bayesian baselines."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve

from .model import ChainSummary
from .randcore import NotPositiveDefinite, chol_psd

__all__ = [
    "SeparableFit",
    "stein_loss",
    "stein_bayes_estimate",
    "sample_covariance",
    "flip_flop_mle",
    "kron_loglik",
    "single_impute_lod",
    "rmse",
]


@dataclass
class SeparableFit:
    row_cov: np.ndarray   # p1 x p1, normalized so [0, 0] == 1
    col_cov: np.ndarray   # p2 x p2, absorbs the overall scale
    iterations: int
    converged: bool

    def full(self) -> np.ndarray:
        """col_cov ⊗ row_cov, the estimate for column-major vectorized data."""
        return np.kron(self.col_cov, self.row_cov)


def stein_loss(sigma: np.ndarray, sigma_hat: np.ndarray) -> float:
    """tr(Σ⁻¹Σ̂) − log|Σ⁻¹Σ̂| − p; invariant, ≥ 0, zero iff equal."""
    cf = chol_psd(np.asarray(sigma, float))
    hat = np.asarray(sigma_hat, float)
    p = cf.dim
    inv_prod = cho_solve((cf.lower, True), hat)
    sign, logdet_hat = np.linalg.slogdet(hat)
    if sign <= 0:
        raise NotPositiveDefinite("estimate is not positive definite")
    logdet_sigma = 2.0 * np.sum(np.log(np.diag(cf.lower)))
    return float(np.trace(inv_prod) - (logdet_hat - logdet_sigma) - p)


def stein_bayes_estimate(summary: ChainSummary) -> np.ndarray:
    """Inverse of the posterior mean precision: the Bayes rule under Stein loss."""
    if summary.n_kept < 1:
        raise ValueError("summary holds no draws")
    cf = chol_psd(summary.mean_precision)
    est = cho_solve((cf.lower, True), np.eye(cf.dim))
    return 0.5 * (est + est.T)


def sample_covariance(y: np.ndarray) -> np.ndarray:
    """(1/n) YᵀY on centered data: the unstructured MLE."""
    y = np.asarray(y, dtype=float)
    return y.T @ y / y.shape[0]


def kron_loglik(
    samples: np.ndarray, row_cov: np.ndarray, col_cov: np.ndarray
) -> float:
    """Gaussian log-likelihood of n p1 x p2 matrices under Cov(vec) = col ⊗ row."""
    n, p1, p2 = samples.shape
    rf = chol_psd(row_cov)
    cf = chol_psd(col_cov)
    ld_r = 2.0 * np.sum(np.log(np.diag(rf.lower)))
    ld_c = 2.0 * np.sum(np.log(np.diag(cf.lower)))
    quad = 0.0
    for yi in samples:
        a = cho_solve((rf.lower, True), yi)          # R^-1 Y
        quad += float(np.trace(cho_solve((cf.lower, True), a.T @ yi)))
    return float(
        -0.5 * n * p1 * p2 * np.log(2.0 * np.pi)
        - 0.5 * n * (p2 * ld_r + p1 * ld_c)
        - 0.5 * quad
    )


class NotConverged(Exception):
    def __init__(self, fit: SeparableFit):
        super().__init__(f"flip-flop did not converge in {fit.iterations} iterations")
        self.fit = fit


class Singular(Exception):
    pass


def flip_flop_mle(
    samples: np.ndarray, tol: float = 1e-8, max_iter: int = 500
) -> SeparableFit:
    """Alternating MLE of a separable covariance from n samples of p1 x p2 matrices.

    Raises Singular when n*p2 <= p1 or n*p1 <= p2 (the MLE does not exist);
    raises NotConverged (carrying the last iterate) past max_iter.
    """
    samples = np.asarray(samples, dtype=float)
    n, p1, p2 = samples.shape
    if n * p2 <= p1 or n * p1 <= p2:
        raise Singular(f"sample size too small for separable MLE: n={n}, p=({p1},{p2})")
    row = np.eye(p1)
    col = np.eye(p2)
    prev = np.kron(col, row)
    for it in range(1, max_iter + 1):
        cf = chol_psd(col)
        row = sum(yi @ cho_solve((cf.lower, True), yi.T) for yi in samples) / (n * p2)
        rf = chol_psd(row)
        col = sum(yi.T @ cho_solve((rf.lower, True), yi) for yi in samples) / (n * p1)
        cur = np.kron(col, row)
        delta = np.linalg.norm(cur - prev) / max(np.linalg.norm(cur), 1e-300)
        prev = cur
        if delta < tol:
            scale = row[0, 0]
            return SeparableFit(row / scale, col * scale, it, True)
    scale = row[0, 0]
    raise NotConverged(SeparableFit(row / scale, col * scale, max_iter, False))


def single_impute_lod(
    y_raw: np.ndarray, mask: np.ndarray, lod: np.ndarray
) -> np.ndarray:
    """Fill masked entries with LOD/sqrt(2); everything else untouched."""
    y = np.array(y_raw, dtype=float, copy=True)
    mask = np.asarray(mask, dtype=bool)
    lod = np.asarray(lod, dtype=float)
    rows, cols = np.nonzero(mask)
    if rows.size and not np.isfinite(lod[np.unique(cols)]).all():
        raise ValueError("masked columns need finite detection limits")
    y[rows, cols] = lod[cols] / np.sqrt(2.0)
    return y


def rmse(truth, estimate) -> float:
    t = np.asarray(truth, dtype=float).ravel()
    e = np.asarray(estimate, dtype=float).ravel()
    if t.size != e.size or t.size == 0:
        raise ValueError("rmse needs two equal-length nonempty lists")
    return float(np.sqrt(np.mean((t - e) ** 2)))
