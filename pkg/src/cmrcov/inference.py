"""Elementwise zero-correlation tests with FDR control, and credible-interval
zero-inclusion maps from a fitted chain."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import t as student_t

from .model import ChainSummary

__all__ = [
    "DegenerateColumn",
    "SignificanceMatrix",
    "correlation_pvalues",
    "benjamini_yekutieli",
    "significance_matrix",
    "ci_zero_inclusion",
]

P_FLOOR = 1e-300


class DegenerateColumn(Exception):
    pass


@dataclass
class SignificanceMatrix:
    p_adjusted: np.ndarray    # p x p symmetric, diagonal 0
    reject: np.ndarray        # p x p bool, diagonal True
    method: str
    level: float


def correlation_pvalues(y: np.ndarray) -> np.ndarray:
    """Two-sided p-values for zero correlation via the exact t transform."""
    y = np.asarray(y, dtype=float)
    n, p = y.shape
    if n < 4:
        raise ValueError("need n >= 4 for the correlation test")
    sds = y.std(axis=0, ddof=0)
    if np.any(sds == 0):
        raise DegenerateColumn(
            f"column {int(np.flatnonzero(sds == 0)[0])} has zero variance"
        )
    corr = np.corrcoef(y, rowvar=False)
    r = np.clip(corr, -1.0, 1.0)
    out = np.ones((p, p))
    iu = np.triu_indices(p, k=1)
    rv = r[iu]
    with np.errstate(divide="ignore"):
        tstat = rv * np.sqrt((n - 2) / np.maximum(1.0 - rv * rv, 0.0))
    pv = np.where(
        np.isfinite(tstat),
        2.0 * student_t.sf(np.abs(tstat), df=n - 2),
        0.0,
    )
    pv = np.maximum(pv, P_FLOOR)
    out[iu] = pv
    out[(iu[1], iu[0])] = pv
    return out


def benjamini_yekutieli(
    pvals: np.ndarray, q: float
) -> tuple[np.ndarray, np.ndarray]:
    """Step-up rule with the harmonic correction c(m) = sum 1/i.

    Returns (reject mask, monotone adjusted p-values), original order.
    """
    pvals = np.asarray(pvals, dtype=float)
    if np.any((pvals < 0) | (pvals > 1)):
        raise ValueError("p-values must lie in [0, 1]")
    m = pvals.size
    order = np.argsort(pvals, kind="stable")
    sorted_p = pvals[order]
    c_m = np.sum(1.0 / np.arange(1, m + 1))
    ranks = np.arange(1, m + 1)
    thresh = ranks * q / (m * c_m)
    passed = np.flatnonzero(sorted_p <= thresh)
    k_hat = passed[-1] + 1 if passed.size else 0
    reject_sorted = np.zeros(m, dtype=bool)
    reject_sorted[:k_hat] = True

    adj_sorted = np.minimum(1.0, sorted_p * m * c_m / ranks)
    adj_sorted = np.minimum.accumulate(adj_sorted[::-1])[::-1]

    reject = np.zeros(m, dtype=bool)
    adjusted = np.zeros(m)
    reject[order] = reject_sorted
    adjusted[order] = adj_sorted
    return reject, adjusted


def significance_matrix(y: np.ndarray, level: float = 0.05) -> SignificanceMatrix:
    """Pairwise zero-correlation tests BY-adjusted over the p(p-1)/2 pairs."""
    pmat = correlation_pvalues(y)
    p = pmat.shape[0]
    iu = np.triu_indices(p, k=1)
    reject_flat, adj_flat = benjamini_yekutieli(pmat[iu], level)
    adj = np.zeros((p, p))
    rej = np.eye(p, dtype=bool)
    adj[iu] = adj_flat
    adj[(iu[1], iu[0])] = adj_flat
    rej[iu] = reject_flat
    rej[(iu[1], iu[0])] = reject_flat
    return SignificanceMatrix(adj, rej, "benjamini_yekutieli", level)


def ci_zero_inclusion(summary: ChainSummary, level: float | None = None) -> np.ndarray:
    """True where the elementwise correlation credible interval covers zero."""
    if level is not None and abs(level - summary.ci_level) > 1e-12:
        raise ValueError(
            f"summary stores {summary.ci_level:.3f} intervals, requested {level:.3f}"
        )
    inc = (summary.corr_lo <= 0.0) & (summary.corr_hi >= 0.0)
    np.fill_diagonal(inc, False)
    return inc
