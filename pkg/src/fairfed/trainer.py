# Copyright 2026 The fairfed Authors.
# See LICENSE file for licensing details.
"""Local mini-batch SGD on the fair objective, and the per-client lambda sweep."""

import logging
from pathlib import Path
from typing import Callable, List, NamedTuple, Optional, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import Field

from . import metrics
from .data import Dataset
from .objective import (
    EmptyBatchError,
    ModelWeights,
    NonFiniteWeightsError,
    PenaltyConfig,
    objective_and_gradient,
)
from .types import FrozenModel, SweepMetric
from .utils import EPOCH_STREAM, derive_rng

logger = logging.getLogger(__name__)

#: Training aborts once the coefficient norm exceeds this bound.
MAX_WEIGHT_NORM = 1e6

LocalStep = Callable[[ModelWeights, Dataset], ModelWeights]


class DivergenceError(RuntimeError):
    """Raised when training produces non-finite or exploding weights.

    Attributes:
        epoch: 0-based local epoch.
        batch: 0-based batch index within the epoch.
        client_id: the client being trained, when known.
        round_index: the global round, when known.
    """

    def __init__(
        self,
        epoch: int,
        batch: int,
        *,
        client_id: Optional[int] = None,
        round_index: Optional[int] = None,
    ):
        self.epoch = epoch
        self.batch = batch
        self.client_id = client_id
        self.round_index = round_index
        where = f"epoch {epoch}, batch {batch}"
        if client_id is not None:
            where = f"client {client_id}, round {round_index}, {where}"
        self.message = f"training diverged at {where}"
        super().__init__(self.message)

    def for_client(self, client_id: int, round_index: int) -> "DivergenceError":
        """The same error annotated with the client and round it happened in."""
        return DivergenceError(
            self.epoch, self.batch, client_id=client_id, round_index=round_index
        )


class SweepError(ValueError):
    """Raised when the lambda sweep has no meaningful baseline."""


class TrainConfig(FrozenModel):
    """Local training hyperparameters.

    A learning rate of 0 is accepted and leaves the weights untouched.
    """

    epochs: int = Field(default=1, ge=1)
    batch_size: int = Field(default=128, ge=1)
    learning_rate: float = Field(default=0.1, ge=0.0)
    penalty: PenaltyConfig = PenaltyConfig()
    seed: int = Field(default=0, ge=0)


def sgd_step(weights: ModelWeights, batch: Dataset, cfg: TrainConfig) -> ModelWeights:
    """One step ``w <- w - lr * grad`` of the fair objective on ``batch``."""
    _, grad_w, grad_b = objective_and_gradient(weights, batch, cfg.penalty)
    return ModelWeights(
        weights.w - cfg.learning_rate * grad_w, weights.b - cfg.learning_rate * grad_b
    )


def batches(data: Dataset, cfg: TrainConfig, epoch: int) -> List[Dataset]:
    """Shuffle with the (seed, epoch) stream and cut into batches; the last may be short."""
    order = derive_rng(cfg.seed, EPOCH_STREAM, epoch).permutation(data.n)
    return [
        data.take(order[start : start + cfg.batch_size])
        for start in range(0, data.n, cfg.batch_size)
    ]


def run_epochs(
    init: ModelWeights, data: Dataset, cfg: TrainConfig, step: LocalStep
) -> ModelWeights:
    """Apply ``step`` to every batch of every epoch, guarding against divergence."""
    if data.n == 0:
        raise EmptyBatchError("cannot train on an empty dataset")
    weights = init
    for epoch in range(cfg.epochs):
        for index, batch in enumerate(batches(data, cfg, epoch)):
            try:
                weights = step(weights, batch)
            except NonFiniteWeightsError:
                raise DivergenceError(epoch, index) from None
            if np.linalg.norm(weights.w) > MAX_WEIGHT_NORM:
                raise DivergenceError(epoch, index)
    return weights


def train_local(init: ModelWeights, data: Dataset, cfg: TrainConfig) -> ModelWeights:
    """Mini-batch SGD from ``init``; deterministic given ``cfg.seed``."""
    return run_epochs(init, data, cfg, lambda weights, batch: sgd_step(weights, batch, cfg))


# ================
# | Lambda sweep |
# ================


class LambdaSweepConfig(FrozenModel):
    """How to walk lambda upward until the prediction metric degrades.

    With ``metric="accuracy"`` a lambda passes while accuracy >= factor * Acc0; with
    ``metric="mse"`` it passes while MSE <= MSE0 / factor.
    """

    step: float = Field(default=0.5, gt=0.0)
    factor: float = Field(default=0.995, gt=0.0, le=1.0)
    max_lambda: float = Field(default=10.0, gt=0.0)
    metric: SweepMetric = "accuracy"


class SweepPoint(NamedTuple):
    """One tested lambda with its prediction metric on the client's test split."""

    lambda_: float
    score: float


class SweepResult(NamedTuple):
    """Selected lambda and the full trace, baseline first."""

    lambda_k: float
    trace: List[SweepPoint]


def passes(score: float, baseline: float, sweep: LambdaSweepConfig) -> bool:
    """Whether ``score`` is still within the allowed degradation from ``baseline``."""
    if sweep.metric == "accuracy":
        return score >= sweep.factor * baseline
    return score <= baseline / sweep.factor


def select_lambda(trace: List[SweepPoint], sweep: LambdaSweepConfig) -> float:
    """Largest lambda before the first degraded point; ``trace[0]`` is the lambda=0 baseline."""
    baseline = trace[0].score
    chosen = trace[0].lambda_
    for point in trace[1:]:
        if not passes(point.score, baseline, sweep):
            break
        chosen = point.lambda_
    return chosen


def _sweep_score(weights: ModelWeights, test: Dataset, metric: SweepMetric) -> float:
    preds = metrics.predict(weights, test)
    if metric == "accuracy":
        return metrics.accuracy(preds)
    return metrics.mean_squared_error(preds)


def lambda_sweep(
    data: Tuple[Dataset, Dataset], base: TrainConfig, sweep: LambdaSweepConfig
) -> SweepResult:
    """Retrain at lambda = 0, step, 2*step, ... until the test metric degrades.

    Every lambda retrains from zero weights with the same seed, so points are
    comparable. gamma stays at ``base.penalty.gamma``.

    Raises:
        SweepError: if the test split holds a single outcome class.
    """
    train, test = data
    if len(np.unique(test.outcomes)) < 2:
        raise SweepError("test split holds one outcome class; the baseline is degenerate")

    def score_at(lambda_: float) -> float:
        cfg = base.model_copy(
            update={"penalty": base.penalty.model_copy(update={"lambda_": lambda_})}
        )
        weights = train_local(ModelWeights.zeros(train.d), train, cfg)
        return _sweep_score(weights, test, sweep.metric)

    baseline = score_at(0.0)
    trace = [SweepPoint(0.0, baseline)]
    degraded = False
    k = 1
    while k * sweep.step <= sweep.max_lambda * (1 + 1e-12):
        lambda_ = k * sweep.step
        trace.append(SweepPoint(lambda_, score_at(lambda_)))
        logger.debug("lambda %g: %s %.6f", lambda_, sweep.metric, trace[-1].score)
        if not passes(trace[-1].score, baseline, sweep):
            degraded = True
            break
        k += 1

    lambda_k = select_lambda(trace, sweep)
    if not degraded:
        logger.warning(
            "%s never degraded up to lambda %g; using the maximum", sweep.metric, lambda_k
        )
    return SweepResult(lambda_k, trace)


def write_sweep_trace(trace: List[SweepPoint], path: Union[str, Path], *, metric: str) -> Path:
    """Export ``(lambda, metric)`` pairs as CSV for plotting."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame([(p.lambda_, p.score) for p in trace], columns=["lambda", metric]).to_csv(
        path, index=False
    )
    return path
