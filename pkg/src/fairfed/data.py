# Copyright 2026 The fairfed Authors.
# See LICENSE file for licensing details.
"""Tabular datasets for federated experiments.

## Overview

A `Dataset` holds a feature matrix, outcomes encoded as -1/+1, a binary sensitive
group (0/1) and named auxiliary attributes (e.g. ``race`` or ``age``) that are not
model inputs but drive partitioning and subgroup reports.

The pipeline stages are all pure functions of their inputs and a seed:

- `load_csv` / `write_sites`: CSV ingestion and per-site output with a manifest.
- `federated_standardize`: z-scoring with pooled statistics computed from
  per-client aggregates only.
- `partition`: heterogeneous split of a cohort into K simulated sites.
- `split`: shuffled train/test cut.
- `generate_synthetic`: a documented generative law with a tunable group bias.

Outcome encoding happens once, at ingestion: a 0/1 column becomes -1/+1, and all
training math uses -1/+1. Metrics convert back to 0/1 at prediction time.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterator, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import Field, model_validator
from scipy.special import expit

from .types import FrozenModel, PartitionStrategy
from .utils import PARTITION_STREAM, SPLIT_STREAM, SYNTH_STREAM, derive_rng

logger = logging.getLogger(__name__)


class DataError(ValueError):
    """Raised when a dataset or pipeline input is invalid.

    Attributes:
        path: the file being read, if any.
        row: 1-based line number in the file (header is line 1), if known.
        column: the offending column or feature name, if known.
    """

    def __init__(
        self,
        message: str,
        *,
        path: Optional[Union[str, Path]] = None,
        row: Optional[int] = None,
        column: Optional[str] = None,
    ):
        self.path = path
        self.row = row
        self.column = column
        location = ", ".join(
            part
            for part in (
                f"file {path}" if path is not None else "",
                f"line {row}" if row is not None else "",
                f"column {column!r}" if column is not None else "",
            )
            if part
        )
        self.message = f"{message} ({location})" if location else message
        super().__init__(self.message)


@dataclass(frozen=True)
class Example:
    """A single row: standardized features, -1/+1 outcome, 0/1 group, raw attributes."""

    features: np.ndarray
    outcome: int
    group: int
    aux: Mapping[str, Any] = field(default_factory=dict)


@dataclass(frozen=True, eq=False)
class Dataset:
    """Column-oriented collection of `Example` rows sharing one schema.

    Attributes:
        feature_names: ordered feature names; ``d == len(feature_names)``.
        features: float matrix of shape (n, d).
        outcomes: int vector of shape (n,), values in {-1, +1}.
        groups: int vector of shape (n,), values in {0, 1}.
        aux: named per-row attributes, each an array of shape (n,).
    """

    feature_names: Tuple[str, ...]
    features: np.ndarray
    outcomes: np.ndarray
    groups: np.ndarray
    aux: Mapping[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float64)
        if features.ndim != 2:
            raise DataError(f"features must be a matrix, got shape {features.shape}")
        n, d = features.shape
        if d < 1 or d != len(self.feature_names):
            raise DataError(
                f"feature dimension {d} does not match {len(self.feature_names)} feature names"
            )
        outcomes = np.asarray(self.outcomes, dtype=np.int64).reshape(-1)
        groups = np.asarray(self.groups, dtype=np.int64).reshape(-1)
        if outcomes.shape != (n,) or groups.shape != (n,):
            raise DataError("features, outcomes and groups must have the same number of rows")
        if not np.all(np.isfinite(features)):
            raise DataError("features must be finite")
        if not np.all((outcomes == -1) | (outcomes == 1)):
            raise DataError("outcomes must be -1 or +1")
        if not np.all((groups == 0) | (groups == 1)):
            raise DataError("groups must be 0 or 1")
        aux = {name: np.asarray(values) for name, values in self.aux.items()}
        for name, values in aux.items():
            if values.shape != (n,):
                raise DataError("auxiliary attribute length mismatch", column=name)
        # frozen dataclass: normalize through object.__setattr__
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "outcomes", outcomes)
        object.__setattr__(self, "groups", groups)
        object.__setattr__(self, "aux", aux)

    @property
    def n(self) -> int:
        """Number of rows."""
        return int(self.features.shape[0])

    @property
    def d(self) -> int:
        """Feature dimension."""
        return int(self.features.shape[1])

    def __len__(self) -> int:
        return self.n

    @property
    def group_sizes(self) -> Tuple[int, int]:
        """Row counts ``(n1, n2)`` of group 0 and group 1."""
        n2 = int(np.count_nonzero(self.groups))
        return self.n - n2, n2

    def examples(self) -> Iterator[Example]:
        """Iterate over rows as `Example` objects."""
        for i in range(self.n):
            yield Example(
                features=self.features[i],
                outcome=int(self.outcomes[i]),
                group=int(self.groups[i]),
                aux={name: values[i] for name, values in self.aux.items()},
            )

    def take(self, indices: Union[Sequence[int], np.ndarray]) -> "Dataset":
        """Return the rows at ``indices``, in that order."""
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(
            feature_names=self.feature_names,
            features=self.features[idx],
            outcomes=self.outcomes[idx],
            groups=self.groups[idx],
            aux={name: values[idx] for name, values in self.aux.items()},
        )

    def with_features(self, features: np.ndarray) -> "Dataset":
        """Return a copy with the feature matrix replaced."""
        return Dataset(
            feature_names=self.feature_names,
            features=features,
            outcomes=self.outcomes,
            groups=self.groups,
            aux=self.aux,
        )

    @classmethod
    def concat(cls, datasets: Sequence["Dataset"]) -> "Dataset":
        """Stack datasets sharing one schema, preserving order."""
        if not datasets:
            raise DataError("cannot concatenate an empty list of datasets")
        first = datasets[0]
        for other in datasets[1:]:
            if other.feature_names != first.feature_names:
                raise DataError("cannot concatenate datasets with different features")
            if set(other.aux) != set(first.aux):
                raise DataError("cannot concatenate datasets with different attributes")
        return cls(
            feature_names=first.feature_names,
            features=np.concatenate([ds.features for ds in datasets]),
            outcomes=np.concatenate([ds.outcomes for ds in datasets]),
            groups=np.concatenate([ds.groups for ds in datasets]),
            aux={
                name: np.concatenate([ds.aux[name] for ds in datasets]) for name in first.aux
            },
        )


# ==================
# | CSV ingestion |
# ==================


class CsvSchema(FrozenModel):
    """Column roles of a CSV file.

    ``group_order`` declares which raw value of the sensitive column maps to group 0
    (first) and group 1 (second). Without it, a 0/1 column is taken as-is and any other
    two values are mapped in sorted order.
    """

    features: Tuple[str, ...] = Field(min_length=1)
    outcome: str
    group: str
    group_order: Optional[Tuple[str, str]] = None
    aux: Tuple[str, ...] = ()

    @model_validator(mode="after")
    def _distinct_columns(self) -> "CsvSchema":
        columns = [*self.features, self.outcome, self.group, *self.aux]
        if len(set(columns)) != len(columns):
            raise ValueError(f"a column may play only one role: {columns}")
        return self

    @property
    def columns(self) -> Tuple[str, ...]:
        """All referenced columns, in role order."""
        return (*self.features, self.outcome, self.group, *self.aux)


def load_csv(path: Union[str, Path], schema: CsvSchema) -> Dataset:
    """Read a CSV file into a `Dataset`, preserving row order.

    Raises:
        DataError: on an empty file, a missing column, a non-numeric or non-finite
            feature cell, an outcome outside {0, 1} / {-1, +1}, or a sensitive column
            with other than two values. The error names the offending line/column.
    """
    path = Path(path)
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except pd.errors.EmptyDataError as e:
        raise DataError("empty file", path=path) from e
    except OSError as e:
        raise DataError(f"cannot read file: {e}", path=path) from e

    for column in schema.columns:
        if column not in frame.columns:
            raise DataError("missing column", path=path, column=column)
    if frame.empty:
        raise DataError("file has a header but no rows", path=path)

    features = np.column_stack(
        [_numeric_column(frame, column, path) for column in schema.features]
    )
    outcomes = _outcome_column(frame, schema.outcome, path)
    groups = _group_column(frame, schema.group, schema.group_order, path)
    aux = {column: _aux_column(frame[column]) for column in schema.aux}

    logger.debug("loaded %d rows from %s", len(frame), path)
    return Dataset(
        feature_names=schema.features,
        features=features,
        outcomes=outcomes,
        groups=groups,
        aux=aux,
    )


def _first_bad_row(mask: "pd.Series[bool]") -> int:
    # data row i sits on file line i + 2 (line 1 is the header)
    return int(np.flatnonzero(mask.to_numpy())[0]) + 2


def _numeric_column(frame: pd.DataFrame, column: str, path: Path) -> np.ndarray:
    values = pd.to_numeric(frame[column], errors="coerce")
    bad = ~np.isfinite(values.to_numpy(dtype=np.float64))
    if bad.any():
        row = _first_bad_row(pd.Series(bad))
        cell = frame[column].iloc[row - 2]
        raise DataError(f"non-numeric feature cell {cell!r}", path=path, row=row, column=column)
    return values.to_numpy(dtype=np.float64)


def _outcome_column(frame: pd.DataFrame, column: str, path: Path) -> np.ndarray:
    values = pd.to_numeric(frame[column], errors="coerce")
    bad = ~values.isin([0, 1, -1])
    if bad.any():
        row = _first_bad_row(bad)
        cell = frame[column].iloc[row - 2]
        raise DataError(f"outcome cell {cell!r} is not binary", path=path, row=row, column=column)
    raw = values.to_numpy(dtype=np.int64)
    if (raw == 0).any() and (raw == -1).any():
        raise DataError("outcome mixes 0 and -1 encodings", path=path, column=column)
    return np.where(raw == 1, 1, -1)


def _group_column(
    frame: pd.DataFrame, column: str, order: Optional[Tuple[str, str]], path: Path
) -> np.ndarray:
    raw = frame[column].str.strip()
    distinct = sorted(raw.unique())
    if len(distinct) > 2:
        raise DataError(
            f"non-binary sensitive column: {len(distinct)} distinct values {distinct[:5]}",
            path=path,
            column=column,
        )
    if order is None:
        order = ("0", "1") if set(distinct) <= {"0", "1"} else _pad_order(distinct)
    unknown = ~raw.isin(order)
    if unknown.any():
        row = _first_bad_row(unknown)
        raise DataError(
            f"sensitive value {raw.iloc[row - 2]!r} not in declared order {list(order)}",
            path=path,
            row=row,
            column=column,
        )
    return np.where(raw.to_numpy() == order[1], 1, 0)


def _pad_order(distinct: List[str]) -> Tuple[str, str]:
    if len(distinct) == 2:
        return distinct[0], distinct[1]
    # a single observed value: it becomes group 0
    return distinct[0], "\0"


def _aux_column(values: "pd.Series[str]") -> np.ndarray:
    numeric = pd.to_numeric(values, errors="coerce")
    if numeric.notna().all():
        return numeric.to_numpy(dtype=np.float64)
    return values.to_numpy(dtype=object)


def to_frame(
    dataset: Dataset, *, outcome_column: str = "outcome", group_column: str = "group"
) -> pd.DataFrame:
    """Render a dataset as a DataFrame with a 0/1 outcome column."""
    frame = pd.DataFrame(dataset.features, columns=list(dataset.feature_names))
    frame[outcome_column] = np.where(dataset.outcomes == 1, 1, 0)
    frame[group_column] = dataset.groups
    for name, values in dataset.aux.items():
        frame[name] = values
    return frame


def site_schema(
    dataset: Dataset, *, outcome_column: str = "outcome", group_column: str = "group"
) -> CsvSchema:
    """The schema that reads back a file written by `write_sites`."""
    return CsvSchema(
        features=dataset.feature_names,
        outcome=outcome_column,
        group=group_column,
        aux=tuple(dataset.aux),
    )


def write_sites(datasets: Sequence[Dataset], out_dir: Union[str, Path]) -> Path:
    """Write one CSV per client plus a ``manifest.csv``; return the manifest path.

    The manifest lists client id, row count, group counts and outcome prevalence.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest: List[Dict[str, Any]] = []
    for client_id, dataset in enumerate(datasets):
        file_name = f"client_{client_id}.csv"
        to_frame(dataset).to_csv(out / file_name, index=False)
        n1, n2 = dataset.group_sizes
        manifest.append(
            {
                "client": client_id,
                "file": file_name,
                "n": dataset.n,
                "n_group0": n1,
                "n_group1": n2,
                "prevalence": float(np.mean(dataset.outcomes == 1)) if dataset.n else 0.0,
            }
        )
    manifest_path = out / "manifest.csv"
    pd.DataFrame(manifest).to_csv(manifest_path, index=False)
    logger.info("wrote %d site files to %s", len(datasets), out)
    return manifest_path


# ====================
# | Standardization |
# ====================


class StandardizationParams(FrozenModel):
    """Per-feature pooled mean and sample standard deviation (denominator n - 1)."""

    means: Dict[str, float]
    sds: Dict[str, float]

    @model_validator(mode="after")
    def _positive_sd(self) -> "StandardizationParams":
        if set(self.means) != set(self.sds):
            raise ValueError("means and sds must cover the same features")
        for name, sd in self.sds.items():
            if not sd > 0:
                raise ValueError(f"standard deviation of {name!r} must be positive")
        return self


def fit_standardization(
    client_datasets: Sequence[Dataset], continuous_features: Sequence[str]
) -> StandardizationParams:
    """Compute pooled statistics from per-client aggregates.

    Each client contributes (count, per-feature sum) and then, once the pooled mean is
    broadcast, its per-feature sum of squared deviations from that mean. No row leaves
    a client.
    """
    if not client_datasets:
        raise DataError("standardization needs at least one client")
    indices = [
        [_feature_index(ds, name) for name in continuous_features] for ds in client_datasets
    ]
    # first exchange: counts and sums
    count = sum(ds.n for ds in client_datasets)
    if count < 2:
        raise DataError("standardization needs at least two rows in total")
    sums = np.sum(
        [ds.features[:, idx].sum(axis=0) for ds, idx in zip(client_datasets, indices)], axis=0
    )
    means = sums / count
    # second exchange: centered sums of squares
    squares = np.sum(
        [
            ((ds.features[:, idx] - means) ** 2).sum(axis=0)
            for ds, idx in zip(client_datasets, indices)
        ],
        axis=0,
    )
    sds = np.sqrt(squares / (count - 1))
    for name, sd in zip(continuous_features, sds):
        if not sd > 0:
            raise DataError("pooled standard deviation is zero", column=name)
    return StandardizationParams(
        means={name: float(m) for name, m in zip(continuous_features, means)},
        sds={name: float(s) for name, s in zip(continuous_features, sds)},
    )


def apply_standardization(dataset: Dataset, params: StandardizationParams) -> Dataset:
    """Replace each standardized feature x by (x - mean) / sd; other columns untouched."""
    features = dataset.features.copy()
    for name, mean in params.means.items():
        j = _feature_index(dataset, name)
        features[:, j] = (features[:, j] - mean) / params.sds[name]
    return dataset.with_features(features)


def federated_standardize(
    client_datasets: Sequence[Dataset], continuous_features: Sequence[str]
) -> Tuple[StandardizationParams, List[Dataset]]:
    """Standardize every client with pooled full-cohort statistics."""
    params = fit_standardization(client_datasets, continuous_features)
    return params, [apply_standardization(ds, params) for ds in client_datasets]


def _feature_index(dataset: Dataset, name: str) -> int:
    try:
        return dataset.feature_names.index(name)
    except ValueError:
        raise DataError("unknown feature", column=name) from None


# ===============
# | Partitioning |
# ===============


class PartitionSpec(FrozenModel):
    """How to cut a cohort into heterogeneous sites.

    ``categorical-skew``: category number c (in sorted order) has home client c mod K;
    each of its rows goes home with probability ``skew + (1 - skew) / K`` and to every
    other client with probability ``(1 - skew) / K``.

    ``quantile-bands``: rows are sorted by the (numeric) attribute, ties kept in input
    order, and cut into K contiguous bands of near-equal size; then a ``1 - skew``
    fraction of rows is drawn uniformly and their client labels are shuffled among
    themselves, which creates overlap while keeping site sizes.
    """

    attribute: str
    strategy: PartitionStrategy = "categorical-skew"
    clients: int = Field(default=4, ge=2)
    skew: float = Field(default=0.8, gt=0.0, le=1.0)
    seed: int = Field(default=0, ge=0)


def partition(dataset: Dataset, spec: PartitionSpec) -> List[Dataset]:
    """Split ``dataset`` into ``spec.clients`` disjoint sites; deterministic given the seed."""
    if spec.attribute not in dataset.aux:
        raise DataError("partition attribute missing", column=spec.attribute)
    if spec.clients > dataset.n:
        raise DataError(f"cannot partition {dataset.n} rows into {spec.clients} clients")
    values = dataset.aux[spec.attribute]
    _check_present(values, spec.attribute)
    rng = derive_rng(spec.seed, PARTITION_STREAM)

    if spec.strategy == "categorical-skew":
        assignment = _categorical_skew(values, spec, rng)
    else:
        assignment = _quantile_bands(values, spec, rng)

    sites: List[Dataset] = []
    for client_id in range(spec.clients):
        rows = np.flatnonzero(assignment == client_id)
        if rows.size == 0:
            raise DataError(
                f"client {client_id} received no rows; lower the client count or the skew",
                column=spec.attribute,
            )
        sites.append(dataset.take(rows))
    logger.debug(
        "partitioned %d rows by %s into sizes %s",
        dataset.n,
        spec.attribute,
        [site.n for site in sites],
    )
    return sites


def _check_present(values: np.ndarray, attribute: str):
    if values.dtype.kind == "f":
        missing = np.isnan(values)
    else:
        missing = np.array([v is None or v == "" for v in values], dtype=bool)
    if missing.any():
        raise DataError(
            f"{int(missing.sum())} rows lack the partition attribute", column=attribute
        )


def _categorical_skew(
    values: np.ndarray, spec: PartitionSpec, rng: np.random.Generator
) -> np.ndarray:
    categories, codes = np.unique(values.astype(str), return_inverse=True)
    k = spec.clients
    preferences = np.full((len(categories), k), (1.0 - spec.skew) / k)
    preferences[np.arange(len(categories)), np.arange(len(categories)) % k] += spec.skew
    # inverse-CDF sampling: one uniform draw per row keeps the stream length fixed
    cdf = np.cumsum(preferences, axis=1)
    draws = rng.random(len(values))
    assignment = (draws[:, None] >= cdf[codes]).sum(axis=1)
    return np.minimum(assignment, k - 1)


def _quantile_bands(
    values: np.ndarray, spec: PartitionSpec, rng: np.random.Generator
) -> np.ndarray:
    if values.dtype.kind not in "iuf":
        raise DataError("quantile-bands needs a numeric attribute", column=spec.attribute)
    order = np.argsort(values, kind="stable")
    assignment = np.empty(len(values), dtype=np.int64)
    for client_id, band in enumerate(np.array_split(order, spec.clients)):
        assignment[band] = client_id
    exchanged = int(round((1.0 - spec.skew) * len(values)))
    if exchanged > 1:
        rows = rng.choice(len(values), size=exchanged, replace=False)
        assignment[rows] = assignment[rng.permutation(rows)]
    return assignment


# ==============
# | Train/test |
# ==============


def split(dataset: Dataset, train_fraction: float, seed: int) -> Tuple[Dataset, Dataset]:
    """Shuffle, then cut into ``round(train_fraction * n)`` training rows and the rest.

    Both parts keep the input's relative row order.
    """
    if not 0.0 < train_fraction < 1.0:
        raise DataError(f"train fraction must be in (0, 1), got {train_fraction}")
    n_train = int(round(train_fraction * dataset.n))
    if n_train == 0 or n_train == dataset.n:
        raise DataError(f"train fraction {train_fraction} leaves one side of {dataset.n} empty")
    permutation = derive_rng(seed, SPLIT_STREAM).permutation(dataset.n)
    return (
        dataset.take(np.sort(permutation[:n_train])),
        dataset.take(np.sort(permutation[n_train:])),
    )


# =============
# | Synthetic |
# =============

#: How much higher feature x0 reads for group 1 than for group 0 at the same
#: underlying value; the measurement carries the group while the outcome does not.
SYNTH_GROUP_SHIFT = 2.0
#: Outcome weight of the underlying value behind x0.
SYNTH_X0_WEIGHT = 0.6
#: Baseline log-odds of a positive outcome.
SYNTH_INTERCEPT = -1.0
#: Race categories and their probabilities in group 0; group 1 uses the reverse order.
SYNTH_RACES = ("A", "B", "C", "D", "E")
SYNTH_RACE_PROBS = (0.4, 0.25, 0.15, 0.12, 0.08)


def synthetic_coefficients(d: int) -> np.ndarray:
    """Outcome coefficients: `SYNTH_X0_WEIGHT` for x0, then ``1.5 / sqrt(j)`` for feature j."""
    beta = np.zeros(d)
    beta[0] = SYNTH_X0_WEIGHT
    j = np.arange(1, d)
    beta[1:] = 1.5 / np.sqrt(j)
    return beta


def generate_synthetic(n: int, d: int, bias: float, seed: int) -> Dataset:
    """Draw a dataset from a fixed generative law.

    - underlying values z ~ N(0, I_d) and group g ~ Bernoulli(0.5), independent of z;
    - features x = z, except ``x0 = z0 + SYNTH_GROUP_SHIFT * (g - 1/2)``: x0 is measured
      with a group-dependent offset, so a model fitted on x0 scores group 1 higher at
      equal risk;
    - outcome y = +1 with probability
      sigmoid(SYNTH_INTERCEPT + beta . z + bias * g - bias / 2), with beta from
      `synthetic_coefficients`; with ``bias = 0`` the outcome is independent of the group;
    - ``race``: a category from `SYNTH_RACES`, drawn with `SYNTH_RACE_PROBS` for group 0
      and the reversed probabilities for group 1;
    - ``age``: ``60 + 16 * (0.5 * x1 + sqrt(0.75) * e)`` clipped to [18, 100], with
      e ~ N(0, 1), so age bands differ in outcome prevalence.
    """
    if n < 10:
        raise DataError(f"synthetic datasets need at least 10 rows, got {n}")
    if d < 1:
        raise DataError(f"synthetic datasets need at least one feature, got {d}")
    rng = derive_rng(seed, SYNTH_STREAM)
    latent = rng.standard_normal((n, d))
    groups = (rng.random(n) < 0.5).astype(np.int64)
    logits = SYNTH_INTERCEPT + latent @ synthetic_coefficients(d) + bias * (groups - 0.5)
    outcomes = np.where(rng.random(n) < expit(logits), 1, -1)
    features = latent.copy()
    features[:, 0] += SYNTH_GROUP_SHIFT * (groups - 0.5)

    probs = np.array(SYNTH_RACE_PROBS)
    race_draw = rng.random(n)
    race_index = np.where(
        groups == 0,
        np.searchsorted(np.cumsum(probs), race_draw, side="right"),
        np.searchsorted(np.cumsum(probs[::-1]), race_draw, side="right"),
    )
    race = np.array(SYNTH_RACES, dtype=object)[np.minimum(race_index, len(SYNTH_RACES) - 1)]
    driver = features[:, 1] if d > 1 else features[:, 0]
    age = np.clip(60.0 + 16.0 * (0.5 * driver + np.sqrt(0.75) * rng.standard_normal(n)), 18, 100)

    return Dataset(
        feature_names=tuple(f"x{j}" for j in range(d)),
        features=features,
        outcomes=outcomes,
        groups=groups,
        aux={"race": race, "age": age},
    )


def continuous_columns(dataset: Dataset, names: Optional[Sequence[str]] = None) -> List[str]:
    """Features to standardize: ``names`` if given, else every non-binary feature."""
    if names is not None:
        return list(names)
    return [
        name
        for j, name in enumerate(dataset.feature_names)
        if not np.isin(dataset.features[:, j], (0.0, 1.0)).all()
    ]
