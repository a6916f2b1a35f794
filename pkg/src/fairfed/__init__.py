# Copyright 2026 The fairfed Authors.
# See LICENSE file for licensing details.

"""Fairness-aware federated logistic regression."""

from .config import ExperimentConfig, load_config
from .data import Dataset, PartitionSpec, generate_synthetic, partition, split
from .federation import FederationConfig, aggregate, personalize, run_federation, run_round
from .harness import demo_config, run_experiment
from .metrics import MetricsReport, auroc, fairness_metrics
from .objective import ModelWeights, PenaltyConfig, objective_and_gradient
from .report import emit_report
from .trainer import TrainConfig, lambda_sweep, train_local
from .tuning import TuningConfig, gamma_grid, lambda_candidates, optimize_gamma, two_step_gamma

__all__ = [
    "Dataset",
    "PartitionSpec",
    "generate_synthetic",
    "partition",
    "split",
    "ModelWeights",
    "PenaltyConfig",
    "objective_and_gradient",
    "TrainConfig",
    "train_local",
    "lambda_sweep",
    "FederationConfig",
    "aggregate",
    "run_round",
    "run_federation",
    "personalize",
    "TuningConfig",
    "gamma_grid",
    "lambda_candidates",
    "optimize_gamma",
    "two_step_gamma",
    "MetricsReport",
    "auroc",
    "fairness_metrics",
    "ExperimentConfig",
    "load_config",
    "demo_config",
    "run_experiment",
    "emit_report",
]
