"""Seedable RNG streams and the dense linear-algebra kernels used everywhere else.

All samplers are driven by an explicit :class:`RngStream`; replaying a
(seed, stream_id) pair reproduces the draw sequence bit-exactly.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.special import gammaln, ndtr, ndtri

__all__ = [
    "NotPositiveDefinite",
    "AllWeightsDegenerate",
    "RngStream",
    "CholFactor",
    "chol_psd",
    "sample_mvn",
    "sample_matrix_normal",
    "sample_inverse_gamma",
    "sample_beta",
    "sample_categorical_log",
    "sample_truncnorm_upper",
    "log_mvn_pdf",
    "log_mvt_pdf",
    "woodbury_precision",
]

_MIX = 0x9E3779B97F4A7C15  # splitmix64 increment, used to derive sub-stream ids


class NotPositiveDefinite(Exception):
    """Raised when a matrix cannot be Cholesky-factorized even with jitter."""


class AllWeightsDegenerate(Exception):
    """Raised when every categorical log-weight is -inf or NaN."""


@dataclass
class RngStream:
    """Counter-based generator (Philox) keyed by (seed, stream_id).

    Distinct stream_ids give statistically independent sequences, so each
    chain, Gibbs sub-step, or simulation replicate can own its own stream.
    """

    seed: int
    stream_id: int = 0
    _gen: np.random.Generator | None = field(default=None, repr=False, compare=False)

    @property
    def gen(self) -> np.random.Generator:
        if self._gen is None:
            key = ((self.seed & 0xFFFFFFFFFFFFFFFF) << 64) | (
                self.stream_id & 0xFFFFFFFFFFFFFFFF
            )
            self._gen = np.random.Generator(np.random.Philox(key=key))
        return self._gen

    def substream(self, k: int) -> "RngStream":
        """Derive a dependent-free child stream; deterministic in (stream_id, k)."""
        sid = ((self.stream_id * _MIX) + k + 1) & 0xFFFFFFFFFFFFFFFF
        return RngStream(self.seed, sid)


@dataclass
class CholFactor:
    """Lower-triangular Cholesky factor of an SPD matrix."""

    lower: np.ndarray
    dim: int

    def reconstruct(self) -> np.ndarray:
        return self.lower @ self.lower.T


def chol_psd(a: np.ndarray, jitter_max: float = 1e-4) -> CholFactor:
    """Cholesky with a symmetrize-then-jitter retry policy.

    Starts at 1e-12 * ||a|| and doubles the diagonal jitter until either the
    factorization succeeds or jitter_max is exceeded.
    """
    a = np.asarray(a, dtype=float)
    sym = 0.5 * (a + a.T)
    p = sym.shape[0]
    try:
        return CholFactor(np.linalg.cholesky(sym), p)
    except np.linalg.LinAlgError:
        pass
    scale = np.linalg.norm(sym)
    jitter = 1e-12 * (scale if scale > 0 else 1.0)
    eye = np.eye(p)
    while jitter <= jitter_max:
        try:
            return CholFactor(np.linalg.cholesky(sym + jitter * eye), p)
        except np.linalg.LinAlgError:
            jitter *= 2.0
    raise NotPositiveDefinite(
        f"matrix of dim {p} not positive definite within jitter budget {jitter_max}"
    )


def sample_mvn(rng: RngStream, mean: np.ndarray, chol: CholFactor) -> np.ndarray:
    mean = np.asarray(mean, dtype=float)
    if mean.shape[0] != chol.dim:
        raise ValueError(f"mean has dim {mean.shape[0]}, factor has dim {chol.dim}")
    z = rng.gen.standard_normal(chol.dim)
    return mean + chol.lower @ z


def sample_matrix_normal(
    rng: RngStream, m: np.ndarray, row_var: np.ndarray, col_cov: np.ndarray
) -> np.ndarray:
    """Draw from N_{p x r}(m, col_cov ⊗ row_var), vec stacking columns.

    row_var is the diagonal of a p x p row covariance; col_cov is r x r SPD.
    """
    m = np.asarray(m, dtype=float)
    row_var = np.asarray(row_var, dtype=float)
    if np.any(row_var <= 0):
        raise ValueError("row_var entries must be positive")
    p, r = m.shape
    bl = chol_psd(col_cov).lower
    e = rng.gen.standard_normal((p, r))
    return m + np.sqrt(row_var)[:, None] * (e @ bl.T)


def sample_inverse_gamma(rng: RngStream, shape: float, rate) -> np.ndarray | float:
    """Inverse-gamma with density ∝ x^{-shape-1} exp(-rate / x).

    rate may be an array, giving independent draws sharing the shape.
    """
    rate = np.asarray(rate, dtype=float)
    if shape <= 0 or np.any(rate <= 0):
        raise ValueError("inverse-gamma parameters must be positive")
    g = rng.gen.gamma(shape, 1.0, size=rate.shape if rate.ndim else None)
    out = rate / g
    return float(out) if rate.ndim == 0 else out


def sample_beta(rng: RngStream, a: float, b: float) -> float:
    if a <= 0 or b <= 0:
        raise ValueError("beta parameters must be positive")
    x = float(rng.gen.beta(a, b))
    # keep draws in the open interval
    eps = np.finfo(float).tiny
    return min(max(x, eps), 1.0 - np.finfo(float).epsneg)


def sample_categorical_log(rng: RngStream, log_weights: np.ndarray) -> int:
    """Index draw with probabilities softmax(log_weights); log-sum-exp stable."""
    lw = np.asarray(log_weights, dtype=float)
    finite = np.isfinite(lw)
    if not finite.any():
        raise AllWeightsDegenerate("no finite categorical log-weight")
    m = lw[finite].max()
    w = np.where(finite, np.exp(lw - m), 0.0)
    total = w.sum()
    u = rng.gen.random() * total
    return int(np.searchsorted(np.cumsum(w), u, side="right").clip(0, lw.size - 1))


_TAIL_CUT = -4.0  # standardized bound below which the exponential-proposal scheme kicks in


def _truncnorm_upper_std(gen: np.random.Generator, alpha: np.ndarray) -> np.ndarray:
    """Standard-normal draws conditioned on z <= alpha, elementwise."""
    alpha = np.asarray(alpha, dtype=float)
    out = np.empty_like(alpha)
    body = alpha >= _TAIL_CUT
    if body.any():
        a = alpha[body]
        u = gen.random(a.shape)
        # ndtr(inf) = 1, so the untruncated case falls out as plain inverse-CDF
        out[body] = ndtri(np.clip(u * ndtr(a), np.finfo(float).tiny, 1.0 - 1e-16))
    tail = ~body
    if tail.any():
        # Robert (1995) translated-exponential rejection for w >= a, a = -alpha > 4
        a = -alpha[tail]
        w = np.empty_like(a)
        todo = np.ones(a.shape, dtype=bool)
        lam = 0.5 * (a + np.sqrt(a * a + 4.0))
        while todo.any():
            k = int(todo.sum())
            prop = a[todo] + gen.exponential(1.0, size=k) / lam[todo]
            acc = gen.random(k) <= np.exp(-0.5 * (prop - lam[todo]) ** 2)
            idx = np.flatnonzero(todo)[acc]
            w[idx] = prop[acc]
            todo[idx] = False
        out[tail] = -w
    return out


def sample_truncnorm_upper(rng: RngStream, mu, sigma, upper) -> np.ndarray | float:
    """Exact draw from N(mu, sigma^2) conditioned on x <= upper.

    Accepts scalars or broadcastable arrays; upper = +inf disables truncation.
    Stable arbitrarily far into the tail.
    """
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if np.any(sigma <= 0):
        raise ValueError("sigma must be positive")
    upper = np.asarray(upper, dtype=float)
    scalar = mu.ndim == 0 and sigma.ndim == 0 and upper.ndim == 0
    mu, sigma, upper = np.broadcast_arrays(mu, sigma, upper)
    alpha = (upper - mu) / sigma
    z = _truncnorm_upper_std(rng.gen, alpha)
    x = mu + sigma * z
    x = np.minimum(x, upper)  # guard exact boundary against rounding
    return float(x) if scalar else x


def log_mvn_pdf(x: np.ndarray, mean: np.ndarray, cov_chol: CholFactor) -> float:
    p = cov_chol.dim
    z = solve_triangular(cov_chol.lower, np.asarray(x, float) - mean, lower=True)
    logdet = 2.0 * np.sum(np.log(np.diag(cov_chol.lower)))
    return float(-0.5 * (p * np.log(2.0 * np.pi) + logdet + z @ z))


def log_mvt_pdf(x: np.ndarray, df: float, scale_chol: CholFactor) -> float:
    """Zero-location multivariate Student-t log-density."""
    if df <= 0:
        raise ValueError("df must be positive")
    p = scale_chol.dim
    z = solve_triangular(scale_chol.lower, np.asarray(x, float), lower=True)
    logdet = 2.0 * np.sum(np.log(np.diag(scale_chol.lower)))
    q = z @ z
    return float(
        gammaln(0.5 * (df + p))
        - gammaln(0.5 * df)
        - 0.5 * p * np.log(df * np.pi)
        - 0.5 * logdet
        - 0.5 * (df + p) * np.log1p(q / df)
    )


def woodbury_precision(d: np.ndarray, lam: np.ndarray) -> tuple[np.ndarray, float]:
    """(D + ΛΛᵀ)⁻¹ and log|D + ΛΛᵀ| via the r x r capacitance matrix."""
    d = np.asarray(d, dtype=float)
    if np.any(d <= 0):
        raise ValueError("d entries must be positive")
    lam = np.asarray(lam, dtype=float)
    dinv = 1.0 / d
    logdet_d = float(np.sum(np.log(d)))
    if lam.size == 0 or lam.shape[1] == 0:
        return np.diag(dinv), logdet_d
    w = dinv[:, None] * lam
    cap = np.eye(lam.shape[1]) + lam.T @ w
    cf = chol_psd(cap)
    mid = cho_solve((cf.lower, True), w.T)
    prec = np.diag(dinv) - w @ mid
    prec = 0.5 * (prec + prec.T)
    logdet = logdet_d + 2.0 * np.sum(np.log(np.diag(cf.lower)))
    return prec, float(logdet)
