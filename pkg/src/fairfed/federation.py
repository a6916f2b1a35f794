# Copyright 2026 The fairfed Authors.
# See LICENSE file for licensing details.
"""Federated rounds under FedAvg or Per-FedAvg.

A round is a barrier: the server broadcasts the global model, every client trains
from it on its own rows and answers with a `ClientUpdate`, and aggregation starts
only once all K updates are in. Only weight vectors and sample counts cross the
client boundary; both travel through a `LoopbackChannel` in their wire form.

Each client draws its batch order from a stream derived from
``(seed, client id, round)``, so running the clients of a round sequentially or on
a thread pool gives bit-identical aggregates.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from pydantic import Field

from .data import Dataset
from .interfaces.exchange import ClientUpdateMessage, GlobalModelMessage, LoopbackChannel
from .objective import EmptyBatchError, ModelWeights, PenaltyConfig, objective_and_gradient
from .trainer import DivergenceError, TrainConfig, run_epochs, train_local
from .types import AggregationMode, FrozenModel, Framework
from .utils import client_seed

logger = logging.getLogger(__name__)


class AggregationError(ValueError):
    """Raised when client updates cannot be combined into one global model."""


class FederationConfig(FrozenModel):
    """Shape of a federated run.

    ``inner_steps`` and ``inner_lr`` only matter for Per-FedAvg. ``max_workers`` above
    1 trains the clients of a round on a thread pool.
    """

    framework: Framework = "fedavg"
    clients: int = Field(default=4, ge=1)
    rounds: int = Field(default=10, ge=1)
    train: TrainConfig = TrainConfig()
    aggregation: AggregationMode = "uniform"
    inner_steps: int = Field(default=1, ge=1)
    inner_lr: float = Field(default=0.1, ge=0.0)
    max_workers: int = Field(default=1, ge=1)


@dataclass(frozen=True)
class ClientUpdate:
    """Parameters a client sends back after local training."""

    client_id: int
    weights: ModelWeights
    n_samples: int
    round_index: int

    def __post_init__(self):
        if self.n_samples < 1:
            raise AggregationError(f"client {self.client_id} reported no samples")

    def to_message(self) -> ClientUpdateMessage:
        """Wire form of this update."""
        return ClientUpdateMessage(
            client_id=self.client_id,
            round_index=self.round_index,
            n_samples=self.n_samples,
            dim=self.weights.d,
            params=self.weights.as_vector().tolist(),
        )

    @classmethod
    def from_message(cls, message: ClientUpdateMessage) -> "ClientUpdate":
        """Inverse of `to_message`."""
        return cls(
            client_id=message.client_id,
            weights=ModelWeights.from_vector(np.asarray(message.params)),
            n_samples=message.n_samples,
            round_index=message.round_index,
        )


@dataclass(frozen=True)
class GlobalModel:
    """Server-side weights after ``round_index`` rounds (0 is the initial model)."""

    round_index: int
    weights: ModelWeights

    @classmethod
    def initial(cls, d: int) -> "GlobalModel":
        """Zero weights at round 0."""
        return cls(0, ModelWeights.zeros(d))

    def to_message(self) -> GlobalModelMessage:
        """Wire form of this model."""
        return GlobalModelMessage(
            round_index=self.round_index,
            dim=self.weights.d,
            params=self.weights.as_vector().tolist(),
        )

    @classmethod
    def from_message(cls, message: GlobalModelMessage) -> "GlobalModel":
        """Inverse of `to_message`."""
        return cls(message.round_index, ModelWeights.from_vector(np.asarray(message.params)))


class FederationResult(NamedTuple):
    """Final global model and the per-round history, initial model first."""

    final: GlobalModel
    history: List[GlobalModel]


def aggregate(updates: Sequence[ClientUpdate], mode: AggregationMode = "uniform") -> GlobalModel:
    """Combine client updates into the next global model.

    ``uniform`` takes the arithmetic mean of ``(w, b)``; ``sample-weighted`` weights
    client k by ``n_k / sum(n)``. Updates are summed in client id order.

    Raises:
        AggregationError: on an empty list, or updates from different rounds or of
            different dimensions.
    """
    if not updates:
        raise AggregationError("no client updates to aggregate")
    rounds = {u.round_index for u in updates}
    if len(rounds) > 1:
        raise AggregationError(f"updates from mixed rounds: {sorted(rounds)}")
    dims = {u.weights.d for u in updates}
    if len(dims) > 1:
        raise AggregationError(f"updates of mixed dimensions: {sorted(dims)}")

    ordered = sorted(updates, key=lambda u: u.client_id)
    round_index = ordered[0].round_index
    first = ordered[0].weights
    if all(u.weights == first for u in ordered[1:]):
        return GlobalModel(round_index, first)

    params = np.stack([u.weights.as_vector() for u in ordered])
    if mode == "uniform":
        mean = params.sum(axis=0) / len(ordered)
    else:
        counts = np.array([u.n_samples for u in ordered], dtype=np.float64)
        mean = (counts[:, None] * params).sum(axis=0) / counts.sum()
    return GlobalModel(round_index, ModelWeights.from_vector(mean))


def client_train_config(cfg: FederationConfig, client_id: int, round_index: int) -> TrainConfig:
    """The TrainConfig client ``client_id`` uses in round ``round_index`` (1-based)."""
    return cfg.train.model_copy(
        update={"seed": client_seed(cfg.train.seed, client_id, round_index)}
    )


def _descend(
    weights: ModelWeights, grad_w: np.ndarray, grad_b: float, rate: float
) -> ModelWeights:
    return ModelWeights(weights.w - rate * grad_w, weights.b - rate * grad_b)


def meta_step(
    weights: ModelWeights, batch: Dataset, cfg: TrainConfig, inner_steps: int, inner_lr: float
) -> ModelWeights:
    """First-order Per-FedAvg update ``w <- w - lr * grad F(w')`` on one batch.

    ``w'`` is ``w`` after ``inner_steps`` steps of rate ``inner_lr`` on the same batch;
    the Hessian term of the meta-gradient is dropped.
    """
    adapted = weights
    if inner_lr > 0.0:
        for _ in range(inner_steps):
            _, grad_w, grad_b = objective_and_gradient(adapted, batch, cfg.penalty)
            adapted = _descend(adapted, grad_w, grad_b, inner_lr)
    _, grad_w, grad_b = objective_and_gradient(adapted, batch, cfg.penalty)
    return _descend(weights, grad_w, grad_b, cfg.learning_rate)


def _train_client(
    start: ModelWeights, data: Dataset, cfg: FederationConfig, client_id: int, round_index: int
) -> ClientUpdate:
    local = client_train_config(cfg, client_id, round_index)
    try:
        if cfg.framework == "fedavg":
            weights = train_local(start, data, local)
        else:
            weights = run_epochs(
                start,
                data,
                local,
                lambda w, batch: meta_step(w, batch, local, cfg.inner_steps, cfg.inner_lr),
            )
    except DivergenceError as e:
        raise e.for_client(client_id, round_index) from e
    return ClientUpdate(client_id, weights, data.n, round_index)


def run_round(
    global_model: GlobalModel,
    clients: Sequence[Dataset],
    cfg: FederationConfig,
    channel: Optional[LoopbackChannel] = None,
) -> GlobalModel:
    """Broadcast, train every client locally, and aggregate into the next global model.

    Raises:
        AggregationError: if ``clients`` is empty.
        DivergenceError: annotated with the failing client id and round.
    """
    if not clients:
        raise AggregationError("a round needs at least one client")
    channel = channel or LoopbackChannel()
    round_index = global_model.round_index + 1
    start = GlobalModel.from_message(channel.transmit(global_model.to_message())).weights

    def train(client_id: int) -> ClientUpdate:
        return _train_client(start, clients[client_id], cfg, client_id, round_index)

    if cfg.max_workers > 1 and len(clients) > 1:
        with ThreadPoolExecutor(max_workers=cfg.max_workers) as pool:
            updates = list(pool.map(train, range(len(clients))))
    else:
        updates = [train(client_id) for client_id in range(len(clients))]

    received = [ClientUpdate.from_message(channel.transmit(u.to_message())) for u in updates]
    result = aggregate(received, cfg.aggregation)
    logger.debug(
        "round %d: aggregated %d %s updates", round_index, len(received), cfg.framework
    )
    return result


def run_federation(
    clients: Sequence[Tuple[Dataset, Dataset]], cfg: FederationConfig
) -> FederationResult:
    """``cfg.rounds`` rounds from zero weights over the clients' training splits.

    Test splits are never read here.

    Raises:
        AggregationError: if no clients are given, their count differs from
            ``cfg.clients``, or their feature dimensions differ.
        EmptyBatchError: if a client has no training rows.
    """
    if not clients:
        raise AggregationError("federation needs at least one client")
    if len(clients) != cfg.clients:
        raise AggregationError(f"expected {cfg.clients} clients, got {len(clients)}")
    train_sets = [train for train, _ in clients]
    dims = {train.d for train in train_sets}
    if len(dims) > 1:
        raise AggregationError(f"clients disagree on feature dimension: {sorted(dims)}")
    for client_id, train in enumerate(train_sets):
        if train.n == 0:
            raise EmptyBatchError(f"client {client_id} has no training rows")

    channel = LoopbackChannel()
    current = GlobalModel.initial(train_sets[0].d)
    history = [current]
    for _ in range(cfg.rounds):
        current = run_round(current, train_sets, cfg, channel)
        history.append(current)
    logger.debug(
        "%s finished %d rounds over %d clients (%d messages)",
        cfg.framework,
        cfg.rounds,
        len(train_sets),
        channel.messages_sent,
    )
    return FederationResult(current, history)


def client_models(
    final: GlobalModel, clients: Sequence[Tuple[Dataset, Dataset]], cfg: FederationConfig
) -> List[ModelWeights]:
    """The model each client is evaluated with.

    FedAvg clients use the global weights as is; Per-FedAvg clients first adapt them
    with `personalize` on their own training split.
    """
    if cfg.framework == "fedavg":
        return [final.weights for _ in clients]
    return [
        personalize(final, train, cfg.inner_steps, cfg.inner_lr, cfg.train.penalty)
        for train, _ in clients
    ]


def personalize(
    global_model: GlobalModel,
    client_train: Dataset,
    steps: int,
    alpha: float,
    penalty: PenaltyConfig = PenaltyConfig(),
) -> ModelWeights:
    """``steps`` full-batch gradient steps of rate ``alpha`` from the global weights."""
    if client_train.n == 0:
        raise EmptyBatchError("cannot personalize on an empty dataset")
    weights = global_model.weights
    if alpha == 0.0:
        return weights
    for _ in range(steps):
        _, grad_w, grad_b = objective_and_gradient(weights, client_train, penalty)
        weights = _descend(weights, grad_w, grad_b, alpha)
    return weights
