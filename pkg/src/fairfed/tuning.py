# Copyright 2026 The fairfed Authors.
# See LICENSE file for licensing details.
"""Data-driven lambda candidates and the two-step gamma search.

Every client first sweeps lambda on its own rows (`fairfed.trainer.lambda_sweep`);
the per-client values are reduced to candidate lambdas. For each candidate, gamma is
searched in two steps: a coarse grid over the configured range, then a finer grid
around the coarse winner. A gamma is chosen by a pure rule over the table of results:
among rows whose mean AUROC is within ``auc_budget`` of the best row, take the one
with the smallest ``(DPD + EOD) / 2``; ties go to the smaller gamma.

>>> [round(g, 4) for g in gamma_grid(0.0001, 0.1, 10)][:3]
[0.0001, 0.0112, 0.0223]
>>> round(gamma_grid(0.0112, 0.0223, 10)[7], 6)
0.019833
>>> lambda_candidates([5.0, 10.0, 15.0], "max", 3)
[5.0, 10.0, 15.0]
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import Field, model_validator

from . import metrics
from .data import Dataset
from .federation import FederationConfig, client_models, client_train_config, run_federation
from .trainer import DivergenceError, LambdaSweepConfig, SweepResult, lambda_sweep
from .types import FrozenModel, LambdaPolicy, RefineConvention

logger = logging.getLogger(__name__)

Clients = Sequence[Tuple[Dataset, Dataset]]


class GammaSearchError(RuntimeError):
    """Raised when training at one grid point fails.

    Attributes:
        gamma: the grid value that failed.
    """

    def __init__(self, gamma: float, reason: str):
        self.gamma = gamma
        self.message = f"training failed at gamma={gamma:g}: {reason}"
        super().__init__(self.message)


class TuningConfig(FrozenModel):
    """Grid sizes, gamma range, lambda policy and the selection budget."""

    coarse_points: int = Field(default=10, ge=2)
    refined_points: int = Field(default=10, ge=2)
    gamma_range: Tuple[float, float] = (0.0001, 0.1)
    lambda_count: int = Field(default=1, ge=1)
    lambda_policy: LambdaPolicy = "min"
    auc_budget: float = Field(default=0.02, ge=0.0)
    refine: RefineConvention = "neighbor"
    sweep: LambdaSweepConfig = LambdaSweepConfig()
    max_workers: int = Field(default=1, ge=1)

    @model_validator(mode="after")
    def _ordered_range(self) -> "TuningConfig":
        lo, hi = self.gamma_range
        if not (0.0 <= lo < hi):
            raise ValueError(f"gamma range must satisfy 0 <= lo < hi, got {self.gamma_range}")
        return self


def gamma_grid(lo: float, hi: float, count: int) -> List[float]:
    """``count`` equally spaced values from ``lo`` to ``hi``, both endpoints exact."""
    if not lo < hi:
        raise ValueError(f"invalid gamma range [{lo}, {hi}]")
    if count < 2:
        raise ValueError(f"a gamma grid needs at least 2 points, got {count}")
    return [float(g) for g in np.linspace(lo, hi, count)]


def lambda_candidates(
    lambda_ks: Sequence[float], policy: LambdaPolicy = "min", count: int = 1
) -> List[float]:
    """``count`` equally spaced values in ``(0, lambda*]``, lambda* = min or max of ``lambda_ks``.

    If lambda* is 0 the only candidate is 0.
    """
    if not lambda_ks:
        raise ValueError("no per-client lambda values")
    if count < 1:
        raise ValueError(f"candidate count must be >= 1, got {count}")
    star = float(min(lambda_ks) if policy == "min" else max(lambda_ks))
    if star == 0.0:
        logger.warning(
            "aggregated lambda (%s over clients) is 0; fairness penalty disabled", policy
        )
        return [0.0]
    return [star * i / count for i in range(1, count + 1)]


# ================
# | Gamma search |
# ================


@dataclass(frozen=True)
class GammaTrial:
    """One row of a gamma search table; metrics are means over client test splits."""

    gamma: float
    auc: Optional[float]
    dpd: Optional[float]
    dpr: Optional[float]
    eod: Optional[float]
    eor: Optional[float]
    eligible: bool = False
    selected: bool = False

    @property
    def score(self) -> float:
        """``(DPD + EOD) / 2``; infinite when either is undefined."""
        if self.dpd is None or self.eod is None:
            return math.inf
        return (self.dpd + self.eod) / 2.0


class GammaSearch(NamedTuple):
    """Selected gamma and the full table, in grid order."""

    gamma: float
    table: List[GammaTrial]


def _ranking(table: Sequence[GammaTrial], auc_budget: float) -> Tuple[List[bool], List[int]]:
    aucs = [row.auc for row in table if row.auc is not None]
    best = max(aucs) if aucs else None
    eligible = [
        best is None or (row.auc is not None and row.auc >= best - auc_budget) for row in table
    ]
    # eligible rows first, then by score, then by gamma
    order = sorted(
        range(len(table)), key=lambda i: (not eligible[i], table[i].score, table[i].gamma)
    )
    return eligible, order


def select_gamma(table: Sequence[GammaTrial], auc_budget: float) -> List[GammaTrial]:
    """Recompute the ``eligible`` and ``selected`` flags of ``table`` from its metrics."""
    if not table:
        raise ValueError("cannot select from an empty gamma table")
    eligible, order = _ranking(table, auc_budget)
    return [
        replace(row, eligible=eligible[i], selected=(i == order[0]))
        for i, row in enumerate(table)
    ]


def selected_index(table: Sequence[GammaTrial]) -> int:
    """Position of the selected row."""
    for i, row in enumerate(table):
        if row.selected:
            return i
    raise ValueError("gamma table has no selected row")


def runner_up_index(table: Sequence[GammaTrial], auc_budget: float) -> Optional[int]:
    """Position of the second-ranked row under the selection rule, if any."""
    _, order = _ranking(table, auc_budget)
    return order[1] if len(order) > 1 else None


def refine_range(
    grid: Sequence[float],
    index: int,
    convention: RefineConvention = "neighbor",
    runner_up: Optional[int] = None,
) -> Tuple[float, float]:
    """The step-two range around ``grid[index]``, clamped to the grid ends.

    ``bracket`` spans ``[grid[index-1], grid[index+1]]``. ``neighbor`` spans the one
    interval next to ``grid[index]`` on the side of ``runner_up`` (upward when there
    is no runner-up).
    """
    last = len(grid) - 1
    if last < 1:
        raise ValueError("refinement needs a grid of at least 2 points")
    if index == 0:
        return grid[0], grid[1]
    if index == last:
        return grid[last - 1], grid[last]
    if convention == "bracket":
        return grid[index - 1], grid[index + 1]
    if runner_up is not None and runner_up < index:
        return grid[index - 1], grid[index]
    return grid[index], grid[index + 1]


def _trial(
    gamma: float, lambda_: float, clients: Clients, fed_cfg: FederationConfig
) -> GammaTrial:
    penalty = fed_cfg.train.penalty.model_copy(update={"lambda_": lambda_, "gamma": gamma})
    cfg = fed_cfg.model_copy(
        update={"train": fed_cfg.train.model_copy(update={"penalty": penalty})}
    )
    try:
        final, _ = run_federation(clients, cfg)
        models = client_models(final, clients, cfg)
        reports = [metrics.evaluate(w, test) for w, (_, test) in zip(models, clients)]
    except (DivergenceError, ValueError) as e:
        raise GammaSearchError(gamma, str(e)) from e
    mean = metrics.average_reports(reports)
    logger.debug("gamma %g: AUC %s, DPD %s, EOD %s", gamma, mean.auroc, mean.dpd, mean.eod)
    return GammaTrial(gamma, mean.auroc, mean.dpd, mean.dpr, mean.eod, mean.eor)


def optimize_gamma(
    grid: Sequence[float],
    lambda_: float,
    clients: Clients,
    fed_cfg: FederationConfig,
    auc_budget: float = 0.02,
    max_workers: int = 1,
) -> GammaSearch:
    """Train and evaluate a federation per grid value and pick gamma by the selection rule.

    Raises:
        GammaSearchError: if training at a grid value fails.
    """
    if not grid:
        raise ValueError("empty gamma grid")

    def run(gamma: float) -> GammaTrial:
        return _trial(gamma, lambda_, clients, fed_cfg)

    if max_workers > 1 and len(grid) > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            rows = list(pool.map(run, grid))
    else:
        rows = [run(gamma) for gamma in grid]

    table = select_gamma(rows, auc_budget)
    winner = table[selected_index(table)].gamma
    return GammaSearch(winner, table)


class TwoStepResult(NamedTuple):
    """Outcome of the two-step search for one lambda."""

    lambda_: float
    gamma: float
    coarse: GammaSearch
    refined: GammaSearch
    refined_range: Tuple[float, float]
    convention: RefineConvention


def two_step_gamma(
    lambda_: float, clients: Clients, fed_cfg: FederationConfig, tune_cfg: TuningConfig
) -> TwoStepResult:
    """Coarse search over ``tune_cfg.gamma_range``, then a refined search around its winner."""
    coarse_grid = gamma_grid(*tune_cfg.gamma_range, tune_cfg.coarse_points)
    coarse = optimize_gamma(
        coarse_grid, lambda_, clients, fed_cfg, tune_cfg.auc_budget, tune_cfg.max_workers
    )
    index = selected_index(coarse.table)
    span = refine_range(
        coarse_grid,
        index,
        tune_cfg.refine,
        runner_up_index(coarse.table, tune_cfg.auc_budget),
    )
    logger.debug("lambda %g: coarse gamma %g, refining over %s", lambda_, coarse.gamma, span)
    refined = optimize_gamma(
        gamma_grid(*span, tune_cfg.refined_points),
        lambda_,
        clients,
        fed_cfg,
        tune_cfg.auc_budget,
        tune_cfg.max_workers,
    )
    return TwoStepResult(lambda_, refined.gamma, coarse, refined, span, tune_cfg.refine)


# ====================
# | Full tuning pass |
# ====================


class TuningResult(NamedTuple):
    """Resolved (lambda, gamma) plus everything needed to audit the choice."""

    lambda_: float
    gamma: float
    sweeps: List[SweepResult]
    candidates: List[float]
    searches: List[TwoStepResult]


def client_lambdas(
    clients: Clients, fed_cfg: FederationConfig, sweep: LambdaSweepConfig
) -> List[SweepResult]:
    """Run the lambda sweep on every client's own (train, test) split."""
    results = []
    for client_id, pair in enumerate(clients):
        base = client_train_config(fed_cfg, client_id, 0)
        result = lambda_sweep(pair, base, sweep)
        logger.debug("client %d: lambda_k %g", client_id, result.lambda_k)
        results.append(result)
    return results


def tune(
    clients: Clients,
    fed_cfg: FederationConfig,
    tune_cfg: TuningConfig,
    *,
    lambda_: Optional[float] = None,
    gamma: Optional[float] = None,
) -> TuningResult:
    """Sweep lambda per client, then search gamma for every lambda candidate.

    A pinned ``lambda_`` skips the sweep; a pinned ``gamma`` replaces the two-step
    search by a single evaluation. With several candidates, the (lambda, gamma) pair
    whose refined winner ranks first under the selection rule is kept; ties go to the
    smaller gamma, then the smaller lambda.
    """
    if lambda_ is not None:
        sweeps: List[SweepResult] = []
        candidates = [lambda_]
    else:
        sweeps = client_lambdas(clients, fed_cfg, tune_cfg.sweep)
        candidates = lambda_candidates(
            [s.lambda_k for s in sweeps], tune_cfg.lambda_policy, tune_cfg.lambda_count
        )

    if gamma is not None:
        searches = [_pinned_gamma(lam, gamma, clients, fed_cfg, tune_cfg) for lam in candidates]
    else:
        searches = [two_step_gamma(lam, clients, fed_cfg, tune_cfg) for lam in candidates]
    finalists = [s.refined.table[selected_index(s.refined.table)] for s in searches]
    best = selected_index(select_gamma(finalists, tune_cfg.auc_budget))
    chosen = searches[best]
    logger.info(
        "%s tuned to lambda=%g, gamma=%g", fed_cfg.framework, chosen.lambda_, chosen.gamma
    )
    return TuningResult(chosen.lambda_, chosen.gamma, sweeps, candidates, searches)


def _pinned_gamma(
    lambda_: float,
    gamma: float,
    clients: Clients,
    fed_cfg: FederationConfig,
    tune_cfg: TuningConfig,
) -> TwoStepResult:
    search = optimize_gamma([gamma], lambda_, clients, fed_cfg, tune_cfg.auc_budget)
    return TwoStepResult(lambda_, gamma, search, search, (gamma, gamma), tune_cfg.refine)


AUDIT_COLUMNS = ("gamma", "AUC", "DPD", "DPR", "EOD", "EOR", "eligible", "selected")


def gamma_table_frame(table: Sequence[GammaTrial]) -> pd.DataFrame:
    """Audit table with columns (gamma, AUC, DPD, DPR, EOD, EOR, eligible, selected)."""
    return pd.DataFrame(
        [
            (r.gamma, r.auc, r.dpd, r.dpr, r.eod, r.eor, r.eligible, r.selected)
            for r in table
        ],
        columns=list(AUDIT_COLUMNS),
    )


def write_audit(searches: Sequence[TwoStepResult], path: Union[str, Path]) -> Path:
    """Both search tables of every lambda candidate as one CSV, tagged by step."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frames = []
    for search in searches:
        for step, result in (("coarse", search.coarse), ("refined", search.refined)):
            frame = gamma_table_frame(result.table)
            frame.insert(0, "step", step)
            frame.insert(0, "lambda", search.lambda_)
            frame["convention"] = search.convention
            frames.append(frame)
    pd.concat(frames, ignore_index=True).to_csv(path, index=False)
    return path
