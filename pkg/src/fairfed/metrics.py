# Copyright 2026 The fairfed Authors.
# See LICENSE file for licensing details.
"""Prediction, AUROC and group fairness metrics.

The four fairness metrics compare per-group selection rates E[Y_hat | a]:

- DPD = max_a E[Y_hat | a] - min_a E[Y_hat | a]            (lower is fairer)
- DPR = min_a E[Y_hat | a] / max_a E[Y_hat | a]            (higher is fairer)
- EOD = max_y (max_a - min_a) E[Y_hat | a, Y = y]          (lower is fairer)
- EOR = min_y (min_a / max_a) E[Y_hat | a, Y = y]          (higher is fairer)

Group and (outcome, group) selection rates come from a fairlearn ``MetricFrame``.

A ratio whose denominator rate is 0 is undefined and reported as ``None``, never as 0
or 1; an outcome slice with no selections in either group therefore makes EOR ``None``
and is listed in ``undefined_ratio_outcomes``. EOD/EOR ignore an outcome slice in which
one group has no rows, and the report lists the ignored slices in ``skipped_outcomes``.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Final, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from fairlearn.metrics import MetricFrame, selection_rate
from scipy.special import expit
from scipy.stats import rankdata

from .data import Dataset
from .objective import ModelWeights, margins

logger = logging.getLogger(__name__)

#: Which direction of each headline metric indicates greater fairness / performance.
IMPROVES_WHEN: Final[Mapping[str, str]] = {
    "AUC": "higher",
    "DPD": "lower",
    "DPR": "higher",
    "EOD": "lower",
    "EOR": "higher",
}
FAIRNESS_METRICS: Final = ("DPD", "DPR", "EOD", "EOR")


class MetricsError(ValueError):
    """Raised when a metric is undefined for the given predictions."""


@dataclass(frozen=True, eq=False)
class PredictionSet:
    """Aligned per-row scores, decisions, groups and 0/1 true outcomes."""

    scores: np.ndarray
    decisions: np.ndarray
    groups: np.ndarray
    outcomes: np.ndarray
    threshold: float = 0.5

    def __post_init__(self):
        n = len(self.scores)
        if not (len(self.decisions) == len(self.groups) == len(self.outcomes) == n):
            raise MetricsError("scores, decisions, groups and outcomes must align")

    def __len__(self) -> int:
        return len(self.scores)


def predict(weights: ModelWeights, data: Dataset, threshold: float = 0.5) -> PredictionSet:
    """Score rows with ``sigmoid(w . x + b)``; decide 1 iff score >= threshold."""
    scores = expit(margins(weights, data))
    return PredictionSet(
        scores=scores,
        decisions=(scores >= threshold).astype(np.int64),
        groups=data.groups,
        outcomes=(data.outcomes == 1).astype(np.int64),
        threshold=threshold,
    )


def accuracy(preds: PredictionSet) -> float:
    """Fraction of rows whose decision equals the true outcome."""
    return float(np.mean(preds.decisions == preds.outcomes))


def mean_squared_error(preds: PredictionSet) -> float:
    """Mean squared difference between score and 0/1 outcome."""
    return float(np.mean((preds.scores - preds.outcomes) ** 2))


def auroc(preds: PredictionSet) -> float:
    """Probability that a random positive outscores a random negative, ties counted 1/2.

    Uses the midrank (Mann-Whitney U) formulation.
    """
    positive = preds.outcomes == 1
    n_pos = int(np.count_nonzero(positive))
    n_neg = len(preds) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricsError("AUROC needs at least one positive and one negative outcome")
    ranks = rankdata(preds.scores, method="average")
    u_statistic = float(np.sum(ranks[positive])) - n_pos * (n_pos + 1) / 2.0
    return u_statistic / (n_pos * n_neg)


@dataclass(frozen=True)
class MetricsReport:
    """Headline metrics plus the cell-level rates they were computed from.

    ``None`` marks an undefined value. For site averages, ``excluded`` counts how many
    per-site values of each headline metric were undefined and left out.
    """

    auroc: Optional[float]
    dpd: Optional[float]
    dpr: Optional[float]
    eod: Optional[float]
    eor: Optional[float]
    n: int = 0
    selection_rates: Dict[int, float] = field(default_factory=dict)
    conditional_rates: Dict[Tuple[int, int], Optional[float]] = field(default_factory=dict)
    cell_counts: Dict[Tuple[int, int], int] = field(default_factory=dict)
    skipped_outcomes: Tuple[int, ...] = ()
    undefined_ratio_outcomes: Tuple[int, ...] = ()
    excluded: Dict[str, int] = field(default_factory=dict)

    def headline(self) -> Dict[str, Optional[float]]:
        """Values keyed by report column (AUC, DPD, DPR, EOD, EOR)."""
        return {
            "AUC": self.auroc,
            "DPD": self.dpd,
            "DPR": self.dpr,
            "EOD": self.eod,
            "EOR": self.eor,
        }


def _ratio(low: float, high: float) -> Optional[float]:
    return low / high if high > 0 else None


def _selection_rates(
    preds: PredictionSet, by_outcome: bool = False
) -> Dict[Tuple[int, ...], float]:
    """Selection rate per ``(group,)``, or per ``(outcome, group)`` cell that has rows."""
    frame = MetricFrame(
        metrics=selection_rate,
        y_true=preds.outcomes,
        y_pred=preds.decisions,
        sensitive_features=pd.Series(preds.groups, name="group"),
        control_features=pd.Series(preds.outcomes, name="outcome") if by_outcome else None,
    )
    rates: Dict[Tuple[int, ...], float] = {}
    for key, value in frame.by_group.items():
        cell = key if isinstance(key, tuple) else (key,)
        if not pd.isna(value):
            rates[tuple(int(k) for k in cell)] = float(value)
    return rates


def fairness_metrics(preds: PredictionSet) -> MetricsReport:
    """DPD, DPR, EOD and EOR (plus AUROC when both outcomes occur).

    Raises:
        MetricsError: if either sensitive group is absent.
    """
    for a in (0, 1):
        if not (preds.groups == a).any():
            raise MetricsError(f"sensitive group {a} is absent")
    by_group = _selection_rates(preds)
    selection = {a: by_group[(a,)] for a in (0, 1)}
    by_cell = _selection_rates(preds, by_outcome=True)

    conditional: Dict[Tuple[int, int], Optional[float]] = {}
    counts: Dict[Tuple[int, int], int] = {}
    gaps: List[float] = []
    ratios: List[float] = []
    skipped: List[int] = []
    undefined: List[int] = []
    for y in (0, 1):
        for a in (0, 1):
            counts[(a, y)] = int(np.count_nonzero((preds.groups == a) & (preds.outcomes == y)))
            conditional[(a, y)] = by_cell.get((y, a)) if counts[(a, y)] else None
        rate0, rate1 = conditional[(0, y)], conditional[(1, y)]
        if rate0 is None or rate1 is None:
            skipped.append(y)
            continue
        gaps.append(max(rate0, rate1) - min(rate0, rate1))
        ratio = _ratio(min(rate0, rate1), max(rate0, rate1))
        if ratio is None:
            undefined.append(y)
        else:
            ratios.append(ratio)

    has_both_outcomes = 0 < int(np.count_nonzero(preds.outcomes)) < len(preds)
    high, low = max(selection.values()), min(selection.values())
    return MetricsReport(
        auroc=auroc(preds) if has_both_outcomes else None,
        dpd=high - low,
        dpr=_ratio(low, high),
        eod=max(gaps) if gaps else None,
        eor=min(ratios) if ratios and not undefined else None,
        n=len(preds),
        selection_rates=selection,
        conditional_rates=conditional,
        cell_counts=counts,
        skipped_outcomes=tuple(skipped),
        undefined_ratio_outcomes=tuple(undefined),
    )


def evaluate(weights: ModelWeights, data: Dataset, threshold: float = 0.5) -> MetricsReport:
    """`predict` followed by `fairness_metrics`."""
    return fairness_metrics(predict(weights, data, threshold))


def average_reports(reports: Sequence[MetricsReport]) -> MetricsReport:
    """Unweighted mean of each headline metric over sites, excluding undefined values."""
    if not reports:
        raise MetricsError("cannot average an empty list of reports")
    means: Dict[str, Optional[float]] = {}
    excluded: Dict[str, int] = {}
    for column in IMPROVES_WHEN:
        values = [r.headline()[column] for r in reports]
        defined = [v for v in values if v is not None]
        excluded[column] = len(values) - len(defined)
        means[column] = float(np.mean(defined)) if defined else None
        if excluded[column]:
            logger.warning(
                "%s undefined at %d of %d sites; excluded from the average",
                column,
                excluded[column],
                len(values),
            )
    return MetricsReport(
        auroc=means["AUC"],
        dpd=means["DPD"],
        dpr=means["DPR"],
        eod=means["EOD"],
        eor=means["EOR"],
        n=sum(r.n for r in reports),
        excluded=excluded,
    )


# ====================
# | Subgroup reports |
# ====================


@dataclass(frozen=True)
class SubgroupRow:
    """Fairness within one value of a slicing attribute; ``report`` is None when flagged."""

    label: str
    n: int
    prevalence: float
    report: Optional[MetricsReport]

    @property
    def flagged(self) -> bool:
        """True when the subgroup holds only one sensitive group."""
        return self.report is None


def subgroup_report(
    weights: ModelWeights, data: Dataset, subgroup_attr: str, threshold: float = 0.5
) -> List[SubgroupRow]:
    """Fairness metrics computed separately within each value of ``subgroup_attr``."""
    if subgroup_attr not in data.aux:
        raise MetricsError(f"unknown subgroup attribute {subgroup_attr!r}")
    labels = np.array([str(v) for v in data.aux[subgroup_attr]], dtype=object)
    rows: List[SubgroupRow] = []
    for label in sorted(set(labels)):
        subset = data.take(np.flatnonzero(labels == label))
        n1, n2 = subset.group_sizes
        report = None
        if n1 and n2:
            report = evaluate(weights, subset, threshold)
        else:
            logger.warning("subgroup %s=%s holds one sensitive group only", subgroup_attr, label)
        rows.append(
            SubgroupRow(
                label=label,
                n=subset.n,
                prevalence=float(np.mean(subset.outcomes == 1)),
                report=report,
            )
        )
    return rows


def subgroup_table(rows: Sequence[SubgroupRow], subgroup_attr: str) -> pd.DataFrame:
    """Rows as a table with columns (<Attribute>, N, Outcome Prevalence, DPD, DPR, EOD, EOR)."""
    header = subgroup_attr.replace("_", " ").title()
    records = [
        {
            header: row.label,
            "N": row.n,
            "Outcome Prevalence": row.prevalence,
            **{
                column: (row.report.headline()[column] if row.report else None)
                for column in FAIRNESS_METRICS
            },
        }
        for row in rows
    ]
    return pd.DataFrame(
        records, columns=[header, "N", "Outcome Prevalence", *FAIRNESS_METRICS]
    )


# ===================
# | Baseline deltas |
# ===================


@dataclass(frozen=True)
class MetricsDelta:
    """Change of a report relative to a baseline.

    ``auc`` is an absolute difference; ``percent`` holds 100 * (value - baseline) /
    baseline per fairness metric (None when undefined); ``improved`` says whether the
    change moved in the fairer direction.
    """

    auc: Optional[float]
    percent: Dict[str, Optional[float]]
    improved: Dict[str, Optional[bool]]


def baseline_delta(report: MetricsReport, baseline: MetricsReport) -> MetricsDelta:
    """Percent change of each fairness metric and absolute AUROC change vs ``baseline``."""
    ours, theirs = report.headline(), baseline.headline()
    auc = None
    if ours["AUC"] is not None and theirs["AUC"] is not None:
        auc = ours["AUC"] - theirs["AUC"]
    percent: Dict[str, Optional[float]] = {}
    improved: Dict[str, Optional[bool]] = {}
    for column in FAIRNESS_METRICS:
        value, base = ours[column], theirs[column]
        if value is None or base is None:
            percent[column], improved[column] = None, None
            continue
        if base != 0:
            percent[column] = 100.0 * (value - base) / base
        else:
            percent[column] = 0.0 if value == base else None
        improved[column] = value < base if IMPROVES_WHEN[column] == "lower" else value > base
    return MetricsDelta(auc=auc, percent=percent, improved=improved)
