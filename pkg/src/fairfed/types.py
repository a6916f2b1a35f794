# Copyright 2026 The fairfed Authors.
# See LICENSE file for licensing details.
"""Types used by fairfed."""

from typing import Final, Literal

import pydantic
from pydantic import ConfigDict

PenaltyForm = Literal["squared-average", "signed-average"]
Framework = Literal["fedavg", "perfedavg"]
AggregationMode = Literal["uniform", "sample-weighted"]
PartitionStrategy = Literal["categorical-skew", "quantile-bands"]
LambdaPolicy = Literal["min", "max"]
SweepMetric = Literal["accuracy", "mse"]
RefineConvention = Literal["neighbor", "bracket"]
StandardizationScope = Literal["full-cohort", "train-only"]
ModelName = Literal[
    "central",
    "local",
    "fedavg",
    "perfedavg",
    "fairfml-fedavg",
    "fairfml-perfedavg",
]

#: Canonical roster order, used for report rows regardless of the configured order.
ROSTER_ORDER: Final = (
    "central",
    "local",
    "fedavg",
    "perfedavg",
    "fairfml-fedavg",
    "fairfml-perfedavg",
)

#: Headline metric columns, in report order.
METRIC_COLUMNS: Final = ("AUC", "DPD", "DPR", "EOD", "EOR")


class FrozenModel(pydantic.BaseModel):
    """Base model for all configuration objects."""

    model_config = ConfigDict(
        # configuration is a value: hashable, never mutated after validation
        frozen=True,
        # typos in config files must not be silently ignored
        extra="forbid",
    )
    """Pydantic config."""
