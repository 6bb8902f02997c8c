"""Typed containers for the data, meta-covariate design, hyperparameters, and
the full Gibbs state, plus centering and state initialization."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .randcore import RngStream

__all__ = [
    "ColumnFullyCensored",
    "Dataset",
    "MetaDesign",
    "Hyperparams",
    "CmrState",
    "ChainSummary",
    "default_hyperparams",
    "center_dataset",
    "init_state",
    "save_state",
    "load_state",
]


class ColumnFullyCensored(Exception):
    pass


@dataclass
class Dataset:
    """Centered observation matrix with optional left-censoring metadata.

    y holds current values for censored entries (imputations, centered scale);
    lod is on the raw scale, column_means map back to it.
    """

    y: np.ndarray                 # n x p, centered
    censored: np.ndarray          # n x p bool
    lod: np.ndarray               # p, raw-scale detection limits (+inf where unused)
    column_means: np.ndarray      # p
    standardized: bool = False

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.y.shape[1]

    @property
    def has_censoring(self) -> bool:
        return bool(self.censored.any())

    def censoring_upper(self) -> np.ndarray:
        """Truncation bound for censored entries on the centered scale."""
        return self.lod - self.column_means


@dataclass
class MetaDesign:
    """p x q meta-covariate matrix describing the variables (columns of y)."""

    x: np.ndarray                       # p x q
    column_kind: list[str]              # per column: intercept | indicator | continuous
    ridge_group: np.ndarray             # q ints, contiguous labels 0..n_groups-1

    @property
    def p(self) -> int:
        return self.x.shape[0]

    @property
    def q(self) -> int:
        return self.x.shape[1]

    @property
    def n_groups(self) -> int:
        return 0 if self.q == 0 else int(self.ridge_group.max()) + 1

    def validate(self) -> None:
        if self.q != len(self.column_kind) or self.q != self.ridge_group.size:
            raise ValueError("design column metadata out of sync with x")
        if self.q:
            labels = np.unique(self.ridge_group)
            if not np.array_equal(labels, np.arange(labels.size)):
                raise ValueError("ridge_group labels must be contiguous from 0")
        for k, kind in enumerate(self.column_kind):
            if kind == "indicator" and not np.isin(self.x[:, k], (0.0, 1.0)).all():
                raise ValueError(f"indicator column {k} contains non-binary values")


def empty_design(p: int) -> MetaDesign:
    """The p x 0 design used by the no-meta-covariate baseline."""
    return MetaDesign(np.zeros((p, 0)), [], np.zeros(0, dtype=int))


@dataclass
class Hyperparams:
    # diffuse IG(0.1, 0.1) on the noise variances: a tighter rate puts a hard
    # floor (~b_d/n) under every variance and ruins estimation of covariances
    # with small eigenvalues
    a_d: float = 0.2
    b_d: float = 0.2
    a_tau: float = 1.0
    b_tau: float = 1.0
    a_theta: float = 2.0
    b_theta: float = 2.0
    theta_inf: float = 0.05
    alpha: float = 5.0
    r: int = 5
    ridge_enabled: bool = False

    def validate(self, p: int | None = None) -> None:
        for name in ("a_d", "b_d", "a_tau", "b_tau", "a_theta", "b_theta", "alpha"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.theta_inf < self.b_theta / (self.a_theta + 1):
            raise ValueError("theta_inf must sit strictly below the slab mode")
        if self.r < 1 or (p is not None and self.r > p):
            raise ValueError("truncation rank r must satisfy 1 <= r <= p")


def default_hyperparams(p: int, **overrides) -> Hyperparams:
    """Weakly informative defaults; rank cap grows logarithmically in p."""
    r = min(p, 5 + math.ceil(2.0 * math.log(p))) if p > 1 else 1
    hp = Hyperparams(r=r)
    for k, v in overrides.items():
        setattr(hp, k, v)
    hp.validate(p)
    return hp


@dataclass
class CmrState:
    """One Gibbs iterate of the full model."""

    lam: np.ndarray       # p x r factor loadings
    gamma: np.ndarray     # q x r meta coefficients
    d: np.ndarray         # p residual variances
    theta: np.ndarray     # r column scales
    tau2: float
    eta: np.ndarray       # n x r latent factors (rows)
    nu: np.ndarray        # r stick-breaking betas, nu[-1] = 1
    omega: np.ndarray     # r stick-breaking weights
    z: np.ndarray         # r spike/slab labels in 0..r-1
    l_scales: np.ndarray  # ridge-group scales (all 1 when ridge disabled)

    @property
    def r(self) -> int:
        return self.lam.shape[1]

    def check_invariants(self, hp: Hyperparams, atol: float = 1e-12) -> None:
        r = self.r
        expect = recompute_omega(self.nu)
        if not np.allclose(self.omega, expect, atol=atol):
            raise AssertionError("omega inconsistent with nu")
        if abs(self.omega.sum() - 1.0) > 1e-10:
            raise AssertionError("omega does not sum to 1")
        if np.any(self.d <= 0) or self.tau2 <= 0 or np.any(self.theta <= 0):
            raise AssertionError("variance entries must be positive")
        spike = self.z <= np.arange(r)
        if not np.all(self.theta[spike] == hp.theta_inf):
            raise AssertionError("spike labels must pin theta at theta_inf")


def recompute_omega(nu: np.ndarray) -> np.ndarray:
    stick = np.concatenate(([1.0], np.cumprod(1.0 - nu)[:-1]))
    return nu * stick


@dataclass
class ChainSummary:
    """Accumulated posterior functionals from one chain."""

    mean_precision: np.ndarray
    mean_cov: np.ndarray
    corr_lo: np.ndarray
    corr_hi: np.ndarray
    n_kept: int
    ci_level: float
    imputed_mean: dict[tuple[int, int], float] = field(default_factory=dict)
    active_factors_trace: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def mean_corr(self) -> np.ndarray:
        s = np.sqrt(np.diag(self.mean_cov))
        return self.mean_cov / np.outer(s, s)


def center_dataset(
    raw: np.ndarray,
    censored: np.ndarray | None = None,
    lod: np.ndarray | None = None,
    standardize: bool = False,
) -> Dataset:
    """Center columns on their uncensored means; pre-fill censored cells at LOD/sqrt(2).

    Optionally also scales columns to unit standard deviation (computed over
    uncensored entries after the fill).
    """
    raw = np.asarray(raw, dtype=float)
    n, p = raw.shape
    if n < 2:
        raise ValueError("need at least two samples")
    if censored is None:
        censored = np.zeros((n, p), dtype=bool)
    censored = np.asarray(censored, dtype=bool)
    if lod is None:
        lod = np.full(p, np.inf)
    lod = np.asarray(lod, dtype=float)
    for j in range(p):
        if censored[:, j].any() and not np.isfinite(lod[j]):
            raise ValueError(f"column {j} has censored entries but no finite LOD")

    obs_counts = (~censored).sum(axis=0)
    if np.any(obs_counts == 0):
        bad = int(np.flatnonzero(obs_counts == 0)[0])
        raise ColumnFullyCensored(f"column {bad} has no uncensored entries")
    means = np.array(
        [raw[~censored[:, j], j].mean() for j in range(p)]
    )
    y = raw - means
    fill = lod / np.sqrt(2.0) - means  # centered-scale initial value
    rows, cols = np.nonzero(censored)
    y[rows, cols] = fill[cols]
    if standardize:
        sds = y.std(axis=0, ddof=0)
        if np.any(sds == 0):
            raise ValueError("cannot standardize a zero-variance column")
        y = y / sds
        # keep lod interpretable: standardization is recorded, not inverted here
        return Dataset(y, censored, lod, means, standardized=True)
    return Dataset(y, censored, lod, means)


def init_state(
    rng: RngStream, data: Dataset, design: MetaDesign, hp: Hyperparams
) -> CmrState:
    """Starting point inside the prior's mass: slab scales everywhere, Λ near XΓ."""
    if design.p != data.p:
        raise ValueError("design and data disagree on p")
    hp.validate(data.p)
    n, p, q, r = data.n, data.p, design.q, hp.r
    gen = rng.gen

    d = np.ones(p)
    tau2 = 1.0
    theta = hp.b_theta / gen.gamma(hp.a_theta, 1.0, size=r)
    nu = gen.beta(1.0, hp.alpha, size=r)
    nu[-1] = 1.0
    omega = recompute_omega(nu)
    z = np.minimum(np.arange(r) + 1, r - 1)  # slab start (last column is
    # structurally spike: no label can exceed it under the truncation)
    theta[z <= np.arange(r)] = hp.theta_inf
    l_scales = np.ones(max(design.n_groups, 1))
    gamma = gen.standard_normal((q, r)) * np.sqrt(theta)[None, :] if q else np.zeros((0, r))
    lam_mean = design.x @ gamma if q else np.zeros((p, r))
    lam = lam_mean + 0.1 * gen.standard_normal((p, r))
    eta = gen.standard_normal((n, r))
    return CmrState(lam, gamma, d, theta, tau2, eta, nu, omega, z, l_scales)


def save_state(path, state: CmrState) -> None:
    np.savez(
        path,
        lam=state.lam,
        gamma=state.gamma,
        d=state.d,
        theta=state.theta,
        tau2=np.array(state.tau2),
        eta=state.eta,
        nu=state.nu,
        omega=state.omega,
        z=state.z,
        l_scales=state.l_scales,
    )


def load_state(path) -> CmrState:
    with np.load(path) as f:
        return CmrState(
            lam=f["lam"],
            gamma=f["gamma"],
            d=f["d"],
            theta=f["theta"],
            tau2=float(f["tau2"]),
            eta=f["eta"],
            nu=f["nu"],
            omega=f["omega"],
            z=f["z"],
            l_scales=f["l_scales"],
        )
