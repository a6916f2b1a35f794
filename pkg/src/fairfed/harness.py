# Copyright 2026 The fairfed Authors.
# See LICENSE file for licensing details.
"""End-to-end experiment runner.

The roster compares six models on the same client splits:

- ``central``: one model on the pooled training rows of all clients;
- ``local``: one model per client on that client's rows only;
- ``fedavg`` / ``perfedavg``: plain federated logistic regression;
- ``fairfml-fedavg`` / ``fairfml-perfedavg``: the same with the fairness penalty at
  tuned (or pinned) lambda and gamma.

Central and local models are single-client federations, so they see the same number
of passes over the data (rounds x epochs) as the federated models. Every model is
evaluated on every client's test split; a local model only on its own client's.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import pandas as pd

from . import metrics
from .config import ExperimentConfig, config_dict
from .data import (
    Dataset,
    StandardizationParams,
    apply_standardization,
    continuous_columns,
    federated_standardize,
    fit_standardization,
    generate_synthetic,
    load_csv,
    partition,
    split,
)
from .federation import FederationConfig, client_models, run_federation
from .objective import ModelWeights, PenaltyConfig
from .trainer import DivergenceError
from .tuning import GammaSearchError, TuningResult, tune
from .types import ROSTER_ORDER, Framework, ModelName
from .utils import derive_seed

logger = logging.getLogger(__name__)

Clients = List[Tuple[Dataset, Dataset]]

#: (attribute, strategy, clients) of the four demo cases.
DEMO_CASES: Dict[int, Tuple[str, str, int]] = {
    1: ("race", "categorical-skew", 4),
    2: ("age", "quantile-bands", 4),
    3: ("race", "categorical-skew", 6),
    4: ("age", "quantile-bands", 6),
}


class ExperimentError(RuntimeError):
    """Raised when a roster model fails to train or evaluate.

    Attributes:
        model: the roster model.
        client: the client involved, when known.
        round_index: the global round, when known.
    """

    def __init__(
        self,
        model: str,
        reason: str,
        *,
        client: Optional[int] = None,
        round_index: Optional[int] = None,
    ):
        self.model = model
        self.client = client
        self.round_index = round_index
        where = model
        if client is not None:
            where += f", client {client}"
        if round_index is not None:
            where += f", round {round_index}"
        self.message = f"{where}: {reason}"
        super().__init__(self.message)


def demo_config(case: int = 1, seed: int = 0) -> ExperimentConfig:
    """Synthetic experiment shaped like one of the four demo cases."""
    if case not in DEMO_CASES:
        raise ValueError(f"unknown demo case {case}; choose from {sorted(DEMO_CASES)}")
    attribute, strategy, clients = DEMO_CASES[case]
    return ExperimentConfig.model_validate(
        {
            "name": f"case-{case}",
            "data": {"synthetic": {"seed": seed}},
            "partition": {
                "attribute": attribute,
                "strategy": strategy,
                "clients": clients,
                "seed": seed,
            },
            "split_seed": seed,
            "federation": {"clients": clients, "train": {"seed": seed}},
        }
    )


# ===================
# | Data preparation |
# ===================


@dataclass(frozen=True)
class PreparedData:
    """Per-client (train, test) splits plus the standardization that produced them."""

    clients: Clients
    standardization: Optional[StandardizationParams]


def load_sites(cfg: ExperimentConfig) -> List[Dataset]:
    """Read or generate the cohort and cut it into sites (before splitting)."""
    data = cfg.data
    if data.sites:
        assert data.csv_schema is not None
        return [load_csv(path, data.csv_schema) for path in data.sites]
    if data.csv is not None:
        assert data.csv_schema is not None
        cohort = load_csv(data.csv, data.csv_schema)
    else:
        assert data.synthetic is not None
        spec = data.synthetic
        cohort = generate_synthetic(spec.n, spec.d, spec.bias, spec.seed)
    return partition(cohort, cfg.partition)


def prepare_clients(cfg: ExperimentConfig) -> PreparedData:
    """Sites -> standardized (train, test) pairs, following ``cfg.standardization``."""
    sites = load_sites(cfg)
    params: Optional[StandardizationParams] = None
    columns = continuous_columns(sites[0], cfg.continuous) if cfg.standardize else []
    if columns and cfg.standardization == "full-cohort":
        params, sites = federated_standardize(sites, columns)

    pairs = [
        split(site, cfg.split_fraction, derive_seed(cfg.split_seed, client_id))
        for client_id, site in enumerate(sites)
    ]
    if columns and cfg.standardization == "train-only":
        params = fit_standardization([train for train, _ in pairs], columns)
        pairs = [
            (apply_standardization(train, params), apply_standardization(test, params))
            for train, test in pairs
        ]
    for client_id, (train, test) in enumerate(pairs):
        logger.debug("client %d: %d train / %d test rows", client_id, train.n, test.n)
    return PreparedData(pairs, params)


# ==========
# | Models |
# ==========


@dataclass(frozen=True)
class ModelResult:
    """Per-client reports of one roster model, their site average and delta vs central."""

    name: str
    reports: List[metrics.MetricsReport]
    average: metrics.MetricsReport
    weights: List[ModelWeights]
    hyperparameters: Dict[str, Any] = field(default_factory=dict)
    delta: Optional[metrics.MetricsDelta] = None


@dataclass(frozen=True)
class ExperimentResult:
    """Everything `fairfed.report` needs to render an experiment."""

    config: ExperimentConfig
    models: Dict[str, ModelResult]
    tuning: Dict[str, TuningResult]
    metadata: Dict[str, Any]
    subgroups: Optional[pd.DataFrame] = None

    @property
    def n_clients(self) -> int:
        """Number of sites."""
        return self.config.n_clients


def _single_client(cfg: ExperimentConfig, penalty: PenaltyConfig) -> FederationConfig:
    return cfg.federation.model_copy(
        update={
            "clients": 1,
            "framework": "fedavg",
            "train": cfg.federation.train.model_copy(update={"penalty": penalty}),
        }
    )


def _federated(
    cfg: ExperimentConfig, framework: Framework, penalty: PenaltyConfig
) -> FederationConfig:
    return cfg.federation.model_copy(
        update={
            "framework": framework,
            "train": cfg.federation.train.model_copy(update={"penalty": penalty}),
        }
    )


def _unpenalized(cfg: ExperimentConfig) -> PenaltyConfig:
    return PenaltyConfig(form=cfg.federation.train.penalty.form)


def _resolve_fairness(
    cfg: ExperimentConfig, framework: Framework, clients: Clients
) -> Tuple[PenaltyConfig, Optional[TuningResult]]:
    form = cfg.federation.train.penalty.form
    if cfg.pinned_lambda is not None and cfg.pinned_gamma is not None:
        return PenaltyConfig(lambda_=cfg.pinned_lambda, gamma=cfg.pinned_gamma, form=form), None
    tuned = tune(
        clients,
        _federated(cfg, framework, _unpenalized(cfg)),
        cfg.tuning,
        lambda_=cfg.pinned_lambda,
        gamma=cfg.pinned_gamma,
    )
    return PenaltyConfig(lambda_=tuned.lambda_, gamma=tuned.gamma, form=form), tuned


def train_model(
    name: ModelName, cfg: ExperimentConfig, clients: Clients
) -> Tuple[List[ModelWeights], Dict[str, Any], Optional[TuningResult]]:
    """Weights each client evaluates ``name`` with, its hyperparameters and tuning audit."""
    plain = _unpenalized(cfg)
    if name == "central":
        pooled = Dataset.concat([train for train, _ in clients])
        final, _ = run_federation([(pooled, pooled)], _single_client(cfg, plain))
        return [final.weights for _ in clients], {"lambda": 0.0, "gamma": 0.0}, None
    if name == "local":
        single = _single_client(cfg, plain)
        weights = [run_federation([pair], single).final.weights for pair in clients]
        return weights, {"lambda": 0.0, "gamma": 0.0}, None

    framework: Framework = "perfedavg" if name.endswith("perfedavg") else "fedavg"
    tuned: Optional[TuningResult] = None
    penalty = plain
    if name.startswith("fairfml"):
        penalty, tuned = _resolve_fairness(cfg, framework, clients)
    fed = _federated(cfg, framework, penalty)
    final, _ = run_federation(clients, fed)
    hyper: Dict[str, Any] = {"lambda": penalty.lambda_, "gamma": penalty.gamma}
    if framework == "perfedavg":
        hyper.update(inner_steps=fed.inner_steps, inner_lr=fed.inner_lr)
    return client_models(final, clients, fed), hyper, tuned


def _evaluate(
    name: str, weights: Sequence[ModelWeights], clients: Clients
) -> List[metrics.MetricsReport]:
    reports = []
    for client_id, (w, (_, test)) in enumerate(zip(weights, clients)):
        try:
            reports.append(metrics.evaluate(w, test))
        except metrics.MetricsError as e:
            raise ExperimentError(name, str(e), client=client_id) from e
    return reports


def _run_model(
    name: ModelName, cfg: ExperimentConfig, clients: Clients
) -> Tuple[List[ModelWeights], Dict[str, Any], Optional[TuningResult]]:
    try:
        return train_model(name, cfg, clients)
    except DivergenceError as e:
        raise ExperimentError(
            name, str(e), client=e.client_id, round_index=e.round_index
        ) from e
    except GammaSearchError as e:
        cause = e.__cause__
        client = cause.client_id if isinstance(cause, DivergenceError) else None
        raise ExperimentError(name, str(e), client=client) from e
    except ValueError as e:
        raise ExperimentError(name, str(e)) from e


def _subgroup_frame(
    cfg: ExperimentConfig, models: Dict[str, ModelResult], clients: Clients
) -> Optional[pd.DataFrame]:
    if cfg.subgroup is None:
        return None
    frames = []
    for name, result in models.items():
        for client_id, (w, (_, test)) in enumerate(zip(result.weights, clients)):
            rows = metrics.subgroup_report(w, test, cfg.subgroup)
            frame = metrics.subgroup_table(rows, cfg.subgroup)
            frame.insert(0, "Client", client_id)
            frame.insert(0, "Model", name)
            frames.append(frame)
    return pd.concat(frames, ignore_index=True)


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    """Train and evaluate every roster model; deterministic given the config's seeds.

    Raises:
        ExperimentError: naming the model (and client/round when known) that failed.
    """
    prepared = prepare_clients(cfg)
    clients = prepared.clients
    roster = [name for name in ROSTER_ORDER if name in cfg.roster]

    models: Dict[str, ModelResult] = {}
    tuning: Dict[str, TuningResult] = {}
    for name in roster:
        weights, hyper, tuned = _run_model(name, cfg, clients)
        if tuned is not None:
            tuning[name] = tuned
        if name == "local":
            # each local model is scored on its own site only
            reports = [
                _evaluate(name, [w], [pair])[0] for w, pair in zip(weights, clients)
            ]
        else:
            reports = _evaluate(name, weights, clients)
        models[name] = ModelResult(
            name, reports, metrics.average_reports(reports), weights, hyper
        )
        logger.info("trained %s (%s)", name, ", ".join(f"{k}={v:g}" for k, v in hyper.items()))

    if "central" in models:
        baseline = models["central"].average
        models = {
            name: ModelResult(
                r.name,
                r.reports,
                r.average,
                r.weights,
                r.hyperparameters,
                metrics.baseline_delta(r.average, baseline),
            )
            for name, r in models.items()
        }

    metadata: Dict[str, Any] = {
        "name": cfg.name,
        "clients": cfg.n_clients,
        "seeds": {
            "synthetic": cfg.data.synthetic.seed if cfg.data.synthetic else None,
            "partition": cfg.partition.seed,
            "split": cfg.split_seed,
            "train": cfg.federation.train.seed,
        },
        "hyperparameters": {name: r.hyperparameters for name, r in models.items()},
        "standardization": (
            prepared.standardization.model_dump() if prepared.standardization else None
        ),
        "config": config_dict(cfg),
    }
    return ExperimentResult(
        cfg, models, tuning, metadata, _subgroup_frame(cfg, models, clients)
    )
