"""Meta-covariate-informed Bayesian covariance estimation.

A factor-model decomposition (diagonal plus low rank) with a matrix-normal
prior that shrinks the loadings toward a regression on variable-level
covariates, an increasing spike/slab shrinkage prior on the factor scales,
optional group-ridge selection of the covariates, and censored-value
imputation inside the Gibbs sampler.
"""
from .model import (
    ChainSummary,
    CmrState,
    Dataset,
    Hyperparams,
    MetaDesign,
    center_dataset,
    default_hyperparams,
    init_state,
)
from .sampler import ChainConfig, run_chain

__version__ = "0.1.0"

__all__ = [
    "ChainConfig",
    "ChainSummary",
    "CmrState",
    "Dataset",
    "Hyperparams",
    "MetaDesign",
    "center_dataset",
    "default_hyperparams",
    "init_state",
    "run_chain",
    "__version__",
]
