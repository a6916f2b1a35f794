# Copyright 2026 The fairfed Authors.
# See LICENSE file for licensing details.
"""The fairness-penalized logistic objective.

The training objective on a batch S is

    J(w, b; S) = L(w, b; S) + lambda * f(w, S) + gamma * ||w||^2

where L is the mean logistic loss on -1/+1 labels and f is the cross-group penalty.
Writing S1 for the group-0 rows and S2 for the group-1 rows, the penalty is built on

    u = 1 / (n1 * n2) * sum_{i in S1, j in S2} [y_i == y_j] * (x_i - x_j)

and is either ``u . w`` (signed-average) or ``(u . w)^2`` (squared-average, the
default). The intercept b enters neither the penalty nor the l2 term.

``u`` is computed in O(n * d) from per-(group, label) feature sums: for label y,
the matching cross-group pairs contribute ``n2_y * S1_y - n1_y * S2_y``, where S_g,y is
the feature sum and n_g,y the count of rows in group g with label y.
"""

import logging
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from pydantic import ConfigDict, Field
from scipy.special import expit

from .data import Dataset
from .types import FrozenModel, PenaltyForm

logger = logging.getLogger(__name__)


class EmptyBatchError(ValueError):
    """Raised when a loss is requested on a batch without rows."""


class NonFiniteWeightsError(ValueError):
    """Raised when weights contain NaN or infinite entries."""


@dataclass(frozen=True, eq=False)
class ModelWeights:
    """Coefficient vector ``w`` and intercept ``b`` of a logistic model."""

    w: np.ndarray
    b: float = 0.0

    def __post_init__(self):
        w = np.array(self.w, dtype=np.float64).reshape(-1)
        b = float(self.b)
        if w.size < 1:
            raise ValueError("weights need at least one coefficient")
        if not (np.all(np.isfinite(w)) and np.isfinite(b)):
            raise NonFiniteWeightsError("weights must be finite")
        w.setflags(write=False)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "b", b)

    @classmethod
    def zeros(cls, d: int) -> "ModelWeights":
        """All-zero weights of dimension ``d``."""
        return cls(np.zeros(d), 0.0)

    @classmethod
    def from_vector(cls, params: np.ndarray) -> "ModelWeights":
        """Inverse of `as_vector`."""
        params = np.asarray(params, dtype=np.float64)
        return cls(params[:-1], float(params[-1]))

    @property
    def d(self) -> int:
        """Feature dimension."""
        return int(self.w.size)

    def as_vector(self) -> np.ndarray:
        """Flat parameters ``[w_1, ..., w_d, b]``."""
        return np.append(self.w, self.b)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ModelWeights):
            return NotImplemented
        return bool(np.array_equal(self.w, other.w)) and self.b == other.b

    def __repr__(self):
        """Return string representation of self."""
        return f"ModelWeights(w={self.w.tolist()}, b={self.b})"


class PenaltyConfig(FrozenModel):
    """Weights of the fairness and l2 terms and the fairness penalty form."""

    model_config = ConfigDict(populate_by_name=True)

    lambda_: float = Field(default=0.0, ge=0.0, alias="lambda")
    gamma: float = Field(default=0.0, ge=0.0)
    form: PenaltyForm = "squared-average"


class ObjectiveValue(NamedTuple):
    """Objective value with its exact gradient."""

    value: float
    grad_w: np.ndarray
    grad_b: float


def margins(weights: ModelWeights, batch: Dataset) -> np.ndarray:
    """Linear scores ``w . x + b`` for every row."""
    return batch.features @ weights.w + weights.b


def logistic_loss(weights: ModelWeights, batch: Dataset) -> float:
    """Mean of ``ln(1 + exp(-y * (w . x + b)))``, stable for any margin."""
    if batch.n == 0:
        raise EmptyBatchError("logistic loss of an empty batch")
    return float(np.mean(np.logaddexp(0.0, -batch.outcomes * margins(weights, batch))))


def penalty_direction(batch: Dataset) -> np.ndarray:
    """The vector ``u`` with ``f(w, S) = u . w`` (zero when a group is absent)."""
    in_group2 = batch.groups == 1
    n2 = int(np.count_nonzero(in_group2))
    n1 = batch.n - n2
    u = np.zeros(batch.d)
    if n1 == 0 or n2 == 0:
        return u
    for label in (-1, 1):
        has_label = batch.outcomes == label
        rows1 = ~in_group2 & has_label
        rows2 = in_group2 & has_label
        n1_y = int(np.count_nonzero(rows1))
        n2_y = int(np.count_nonzero(rows2))
        if n1_y == 0 or n2_y == 0:
            continue
        u += n2_y * batch.features[rows1].sum(axis=0) - n1_y * batch.features[rows2].sum(axis=0)
    return u / (n1 * n2)


def fairness_penalty(
    weights: ModelWeights, batch: Dataset, form: PenaltyForm = "squared-average"
) -> float:
    """Cross-group penalty ``u . w`` or ``(u . w)^2``; 0 if the batch misses a group."""
    score = float(penalty_direction(batch) @ weights.w)
    return score if form == "signed-average" else score * score


def objective_and_gradient(
    weights: ModelWeights, batch: Dataset, cfg: PenaltyConfig
) -> ObjectiveValue:
    """Total objective and its analytic gradient with respect to ``w`` and ``b``."""
    if batch.n == 0:
        raise EmptyBatchError("objective of an empty batch")
    y = batch.outcomes
    m = margins(weights, batch)
    value = float(np.mean(np.logaddexp(0.0, -y * m)))
    # d/dm ln(1 + exp(-y m)) = -y * sigmoid(-y m)
    slope = -y * expit(-y * m)
    grad_w = batch.features.T @ slope / batch.n
    grad_b = float(np.mean(slope))

    if cfg.lambda_ > 0.0:
        u = penalty_direction(batch)
        score = float(u @ weights.w)
        if cfg.form == "signed-average":
            value += cfg.lambda_ * score
            grad_w = grad_w + cfg.lambda_ * u
        else:
            value += cfg.lambda_ * score * score
            grad_w = grad_w + 2.0 * cfg.lambda_ * score * u

    if cfg.gamma > 0.0:
        value += cfg.gamma * float(weights.w @ weights.w)
        grad_w = grad_w + 2.0 * cfg.gamma * weights.w

    return ObjectiveValue(value, grad_w, grad_b)


def objective(weights: ModelWeights, batch: Dataset, cfg: PenaltyConfig) -> float:
    """Total objective value only."""
    return objective_and_gradient(weights, batch, cfg).value
