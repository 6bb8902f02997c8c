"""Meta-covariate design builders and the induced prior marginal covariance."""
from __future__ import annotations

import numpy as np

from .model import MetaDesign
from .randcore import RngStream

__all__ = [
    "MissingCategory",
    "ConstantContinuousColumn",
    "build_intercept",
    "build_categorical",
    "build_multi_categorical",
    "build_matrix_variate",
    "build_general",
    "prior_marginal_cov",
    "gen_mrc_covariate",
]


class MissingCategory(Exception):
    pass


class ConstantContinuousColumn(Exception):
    pass


def _one_hot(g: np.ndarray) -> np.ndarray:
    """One-hot encode labels 1..q (all q levels kept)."""
    g = np.asarray(g, dtype=int)
    q = int(g.max())
    if g.min() < 1:
        raise MissingCategory("labels must start at 1")
    counts = np.bincount(g, minlength=q + 1)[1:]
    if np.any(counts == 0):
        missing = int(np.flatnonzero(counts == 0)[0]) + 1
        raise MissingCategory(f"category {missing} has no members")
    x = np.zeros((g.size, q))
    x[np.arange(g.size), g - 1] = 1.0
    return x


def build_intercept(p: int) -> MetaDesign:
    if p < 1:
        raise ValueError("p must be at least 1")
    return MetaDesign(np.ones((p, 1)), ["intercept"], np.zeros(1, dtype=int))


def build_categorical(g) -> MetaDesign:
    x = _one_hot(np.asarray(g))
    q = x.shape[1]
    return MetaDesign(x, ["indicator"] * q, np.arange(q))


def build_multi_categorical(gs: list) -> MetaDesign:
    if not gs:
        raise ValueError("need at least one label vector")
    p = len(gs[0])
    blocks, groups = [], []
    for i, g in enumerate(gs):
        if len(g) != p:
            raise ValueError("label vectors must share length p")
        block = _one_hot(np.asarray(g))
        blocks.append(block)
        groups.extend([i] * block.shape[1])
    x = np.hstack(blocks)
    return MetaDesign(x, ["indicator"] * x.shape[1], np.asarray(groups))


def build_matrix_variate(p1: int, p2: int) -> MetaDesign:
    """Row/column membership design for p1 x p2 matrix-variate variables.

    Variable j runs column-major over the matrix: j = l + p1*k for row l,
    column k (0-based), matching vec stacking columns.
    """
    if p1 < 1 or p2 < 1:
        raise ValueError("p1 and p2 must be at least 1")
    rows = np.tile(np.arange(1, p1 + 1), p2)
    cols = np.repeat(np.arange(1, p2 + 1), p1)
    return build_multi_categorical([rows, cols])


def build_general(
    columns: list[tuple[str, str, np.ndarray]], standardize: bool = True
) -> MetaDesign:
    """Mixed-type design from declared columns [(name, kind, values), ...].

    kind is "categorical" or "continuous". Categorical columns expand one-hot;
    continuous columns are optionally standardized. An intercept is prepended,
    and each source column gets its own ridge group.
    """
    if not columns:
        raise ValueError("need at least one declared column")
    p = len(columns[0][2])
    blocks = [np.ones((p, 1))]
    kinds = ["intercept"]
    groups = [0]
    next_group = 1
    for name, kind, values in columns:
        values = np.asarray(values)
        if len(values) != p:
            raise ValueError(f"column {name} has wrong length")
        if kind == "categorical":
            block = _one_hot(values.astype(int))
            blocks.append(block)
            kinds.extend(["indicator"] * block.shape[1])
            groups.extend([next_group] * block.shape[1])
        elif kind == "continuous":
            col = values.astype(float)
            if standardize:
                sd = col.std(ddof=0)
                if sd == 0:
                    raise ConstantContinuousColumn(name)
                col = (col - col.mean()) / sd
            blocks.append(col[:, None])
            kinds.append("continuous")
            groups.append(next_group)
        else:
            raise ValueError(f"unknown column kind {kind!r}")
        next_group += 1
    x = np.hstack(blocks)
    return MetaDesign(x, kinds, np.asarray(groups))


def prior_marginal_cov(
    design: MetaDesign, gamma: np.ndarray, t_trace: float
) -> np.ndarray:
    """(1 + tr(T)) I_p + X Γ Γᵀ Xᵀ, the covariance the prior shrinks toward."""
    if t_trace < 0:
        raise ValueError("t_trace must be nonnegative")
    gamma = np.asarray(gamma, dtype=float)
    if gamma.shape[0] != design.q:
        raise ValueError("gamma rows must match design columns")
    p = design.p
    xg = design.x @ gamma
    return (1.0 + t_trace) * np.eye(p) + xg @ xg.T


def gen_mrc_covariate(rng: RngStream, g, sd: float = 0.25) -> np.ndarray:
    """Noisy group-identifying continuous covariate: x_j ~ N(g_j, sd^2)."""
    if sd <= 0:
        raise ValueError("sd must be positive")
    g = np.asarray(g, dtype=float)
    return g + sd * rng.gen.standard_normal(g.size)
