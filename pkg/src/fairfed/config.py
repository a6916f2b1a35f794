# Copyright 2026 The fairfed Authors.
# See LICENSE file for licensing details.
"""Experiment configuration and its YAML file format.

A config file holds every `ExperimentConfig` field, for example::

    name: case-1
    data:
      synthetic: {n: 8000, d: 6, bias: 0.5, seed: 0}
    partition: {attribute: race, strategy: categorical-skew, clients: 4, skew: 0.8, seed: 0}
    federation:
      clients: 4
      rounds: 10
      train: {epochs: 1, batch_size: 128, learning_rate: 0.1}
    roster: [central, local, fedavg, perfedavg, fairfml-fedavg, fairfml-perfedavg]

The ``metadata.yaml`` written next to a report embeds the full config under a
``config`` key; `load_config` accepts that file as well.
"""

import logging
from pathlib import Path
from typing import Any, Dict, Literal, Optional, Tuple, Union

import pydantic
import yaml
from pydantic import Field, field_validator, model_validator

from .data import CsvSchema, PartitionSpec
from .federation import FederationConfig
from .tuning import TuningConfig
from .types import ROSTER_ORDER, FrozenModel, ModelName, StandardizationScope

logger = logging.getLogger(__name__)

ReportFormat = Literal["csv", "md"]


class ConfigError(ValueError):
    """Raised when a config file cannot be read or does not validate."""

    def __init__(self, path: Union[str, Path], reason: str):
        self.path = Path(path)
        self.message = f"invalid config {self.path}: {reason}"
        super().__init__(self.message)


class SyntheticSpec(FrozenModel):
    """Parameters of `fairfed.data.generate_synthetic`."""

    n: int = Field(default=8000, ge=10)
    d: int = Field(default=6, ge=1)
    bias: float = 0.5
    seed: int = Field(default=0, ge=0)


class DataConfig(FrozenModel):
    """Exactly one data source: synthetic, one pooled CSV, or one CSV per site."""

    synthetic: Optional[SyntheticSpec] = None
    csv: Optional[Path] = None
    sites: Tuple[Path, ...] = ()
    csv_schema: Optional[CsvSchema] = None

    @model_validator(mode="after")
    def _one_source(self) -> "DataConfig":
        sources = [self.synthetic is not None, self.csv is not None, bool(self.sites)]
        if sum(sources) != 1:
            raise ValueError("set exactly one of synthetic, csv or sites")
        if (self.csv is not None or self.sites) and self.csv_schema is None:
            raise ValueError("csv_schema is required for CSV data")
        for path in [*([self.csv] if self.csv else []), *self.sites]:
            if not path.is_file():
                raise ValueError(f"data file {path} does not exist")
        return self


class ExperimentConfig(FrozenModel):
    """Everything needed to reproduce one experiment end to end."""

    name: str = "case-1"
    data: DataConfig = DataConfig(synthetic=SyntheticSpec())
    partition: PartitionSpec = PartitionSpec(attribute="race")
    split_fraction: float = Field(default=0.7, gt=0.0, lt=1.0)
    split_seed: int = Field(default=0, ge=0)
    standardize: bool = True
    standardization: StandardizationScope = "full-cohort"
    continuous: Optional[Tuple[str, ...]] = None
    federation: FederationConfig = FederationConfig()
    tuning: TuningConfig = TuningConfig()
    pinned_lambda: Optional[float] = Field(default=None, ge=0.0)
    pinned_gamma: Optional[float] = Field(default=None, ge=0.0)
    roster: Tuple[ModelName, ...] = ROSTER_ORDER
    subgroup: Optional[str] = None
    output_dir: Path = Path("results")
    formats: Tuple[ReportFormat, ...] = ("csv", "md")

    @field_validator("roster")
    @classmethod
    def _valid_roster(cls, roster: Tuple[str, ...]) -> Tuple[str, ...]:
        if not roster:
            raise ValueError("roster must name at least one model")
        if len(set(roster)) != len(roster):
            raise ValueError(f"roster lists a model twice: {roster}")
        return roster

    @model_validator(mode="after")
    def _client_count(self) -> "ExperimentConfig":
        expected = len(self.data.sites) if self.data.sites else self.partition.clients
        if self.federation.clients != expected:
            raise ValueError(
                f"federation.clients is {self.federation.clients} but the data has "
                f"{expected} sites"
            )
        return self

    @property
    def n_clients(self) -> int:
        """Number of sites."""
        return self.federation.clients


def with_seed(cfg: ExperimentConfig, seed: int) -> ExperimentConfig:
    """Use ``seed`` for synthesis, partitioning, splitting and training."""
    update: Dict[str, Any] = {
        "partition": cfg.partition.model_copy(update={"seed": seed}),
        "split_seed": seed,
        "federation": cfg.federation.model_copy(
            update={"train": cfg.federation.train.model_copy(update={"seed": seed})}
        ),
    }
    if cfg.data.synthetic is not None:
        update["data"] = cfg.data.model_copy(
            update={"synthetic": cfg.data.synthetic.model_copy(update={"seed": seed})}
        )
    return cfg.model_copy(update=update)


def config_dict(cfg: ExperimentConfig) -> Dict[str, Any]:
    """Plain-data form of ``cfg``, as written to YAML."""
    return cfg.model_dump(mode="json", by_alias=True)


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    """Read a config file, or the ``config`` section of a ``metadata.yaml``.

    Raises:
        ConfigError: if the file is unreadable, not YAML, or fails validation.
    """
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except (OSError, yaml.YAMLError) as e:
        logger.error("cannot read config %s", path)
        raise ConfigError(path, str(e)) from e
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(path, "expected a mapping at the top level")
    if "config" in raw and isinstance(raw["config"], dict):
        raw = raw["config"]
    try:
        return ExperimentConfig.model_validate(raw)
    except pydantic.ValidationError as e:
        logger.error("config %s failed validation", path)
        raise ConfigError(path, str(e)) from e


def dump_config(cfg: ExperimentConfig, path: Union[str, Path]) -> Path:
    """Write ``cfg`` as YAML, preserving field order."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(yaml.safe_dump(config_dict(cfg), sort_keys=False))
    return path
