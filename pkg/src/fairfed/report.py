# Copyright 2026 The fairfed Authors.
# See LICENSE file for licensing details.
"""Report tables and the files an experiment leaves behind.

``report.csv`` is the canonical table: one row per (client, model), then an
``Average`` row per model, with columns AUC, DPD, DPR, EOD and EOR. Averages are
computed from full-precision values; numbers are rounded to 6 significant figures
only when written. ``deltas.csv`` holds the change of each model's site average
against the central model. ``result.json`` stores everything needed to re-render the
report, and ``metadata.yaml`` everything needed to re-run the experiment.
"""

import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import pandas as pd
import pydantic
import yaml

from . import metrics
from .harness import ExperimentResult
from .trainer import write_sweep_trace
from .tuning import write_audit
from .types import METRIC_COLUMNS

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.6g"
AVERAGE_LABEL = "Average"

Headline = Dict[str, Optional[float]]


class ReportError(RuntimeError):
    """Raised when report files cannot be read or written."""

    def __init__(self, path: Union[str, Path], reason: str):
        self.path = Path(path)
        self.message = f"{self.path}: {reason}"
        super().__init__(self.message)


class ModelSummary(pydantic.BaseModel):
    """Headline numbers of one roster model."""

    name: str
    clients: List[Headline]
    average: Headline
    excluded: Dict[str, int] = {}
    delta_auc: Optional[float] = None
    delta_percent: Dict[str, Optional[float]] = {}
    hyperparameters: Dict[str, Any] = {}


class ResultSummary(pydantic.BaseModel):
    """JSON-serializable form of an `ExperimentResult`."""

    name: str
    n_clients: int
    models: List[ModelSummary]
    metadata: Dict[str, Any] = {}


def summarize(result: ExperimentResult) -> ResultSummary:
    """Drop everything but the numbers the report shows."""
    models = []
    for name, model in result.models.items():
        delta = model.delta
        models.append(
            ModelSummary(
                name=name,
                clients=[r.headline() for r in model.reports],
                average=model.average.headline(),
                excluded=dict(model.average.excluded),
                delta_auc=delta.auc if delta else None,
                delta_percent=dict(delta.percent) if delta else {},
                hyperparameters=model.hyperparameters,
            )
        )
    return ResultSummary(
        name=result.config.name,
        n_clients=result.n_clients,
        models=models,
        metadata=result.metadata,
    )


def report_table(summary: ResultSummary) -> pd.DataFrame:
    """Rows (client x model) followed by the Average block."""
    records: List[Dict[str, Any]] = []
    for client_id in range(summary.n_clients):
        for model in summary.models:
            label = f"Client {client_id + 1}"
            records.append({"Client": label, "Model": model.name, **model.clients[client_id]})
    for model in summary.models:
        records.append({"Client": AVERAGE_LABEL, "Model": model.name, **model.average})
    return pd.DataFrame(records, columns=["Client", "Model", *METRIC_COLUMNS])


def delta_table(summary: ResultSummary) -> pd.DataFrame:
    """Per model: absolute AUC change and percent change of each fairness metric vs central."""
    records = [
        {
            "Model": model.name,
            "AUC change": model.delta_auc,
            **{f"{c} change (%)": model.delta_percent.get(c) for c in metrics.FAIRNESS_METRICS},
        }
        for model in summary.models
    ]
    return pd.DataFrame(
        records,
        columns=[
            "Model",
            "AUC change",
            *(f"{c} change (%)" for c in metrics.FAIRNESS_METRICS),
        ],
    )


def _cell(value: Optional[float], percent: Optional[float] = None) -> str:
    if value is None:
        return "n/a"
    text = f"{value:.3f}"
    if percent is not None:
        text += f" ({percent:+.1f}%)"
    return text


def render_markdown(summary: ResultSummary) -> str:
    """Human-readable report; average fairness values carry their change vs central."""
    header = ["Client", "Model", *METRIC_COLUMNS]
    lines = [
        f"# {summary.name}",
        "",
        "| " + " | ".join(header) + " |",
        "|" + "---|" * len(header),
    ]
    for client_id in range(summary.n_clients):
        for model in summary.models:
            values = model.clients[client_id]
            cells = [_cell(values[c]) for c in METRIC_COLUMNS]
            lines.append(f"| Client {client_id + 1} | {model.name} | " + " | ".join(cells) + " |")
    for model in summary.models:
        cells = [
            _cell(model.average[c], model.delta_percent.get(c) if c != "AUC" else None)
            for c in METRIC_COLUMNS
        ]
        lines.append(f"| **{AVERAGE_LABEL}** | {model.name} | " + " | ".join(cells) + " |")

    lines += ["", "## Hyperparameters", ""]
    for model in summary.models:
        if model.hyperparameters:
            params = ", ".join(f"{k}={v:g}" for k, v in model.hyperparameters.items())
            lines.append(f"- {model.name}: {params}")
    excluded = [
        f"- {model.name}: {column} undefined at {count} site(s)"
        for model in summary.models
        for column, count in model.excluded.items()
        if count
    ]
    if excluded:
        lines += ["", "## Excluded from averages", "", *excluded]
    return "\n".join(lines) + "\n"


def _write_csv(frame: pd.DataFrame, path: Path) -> Path:
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, na_rep="")
    return path


def emit_summary(
    summary: ResultSummary, out_dir: Union[str, Path], formats: Sequence[str] = ("csv", "md")
) -> List[Path]:
    """Write the report files for ``summary``; return their paths.

    Raises:
        ReportError: if the output directory is not writable.
    """
    out = Path(out_dir)
    written: List[Path] = []
    try:
        out.mkdir(parents=True, exist_ok=True)
        if "csv" in formats:
            written.append(_write_csv(report_table(summary), out / "report.csv"))
            written.append(_write_csv(delta_table(summary), out / "deltas.csv"))
        if "md" in formats:
            path = out / "report.md"
            path.write_text(render_markdown(summary))
            written.append(path)
        path = out / "metadata.yaml"
        path.write_text(yaml.safe_dump(summary.metadata, sort_keys=False))
        written.append(path)
        path = out / "result.json"
        path.write_text(summary.model_dump_json(indent=2))
        written.append(path)
    except OSError as e:
        logger.error("cannot write report to %s", out)
        raise ReportError(out, str(e)) from e
    logger.info("wrote %d report files to %s", len(written), out)
    return written


def emit_report(
    result: ExperimentResult,
    out_dir: Optional[Union[str, Path]] = None,
    formats: Optional[Sequence[str]] = None,
) -> List[Path]:
    """Write the report plus tuning audits and subgroup tables of ``result``.

    ``out_dir`` and ``formats`` default to the experiment config's values.
    """
    out = Path(out_dir if out_dir is not None else result.config.output_dir)
    written = emit_summary(
        summarize(result), out, formats if formats is not None else result.config.formats
    )
    try:
        for name, tuned in result.tuning.items():
            written.append(write_audit(tuned.searches, out / f"gamma_audit_{name}.csv"))
            for client_id, sweep in enumerate(tuned.sweeps):
                written.append(
                    write_sweep_trace(
                        sweep.trace,
                        out / f"lambda_sweep_{name}_client_{client_id + 1}.csv",
                        metric=result.config.tuning.sweep.metric,
                    )
                )
        if result.subgroups is not None:
            written.append(_write_csv(result.subgroups, out / "subgroups.csv"))
    except OSError as e:
        raise ReportError(out, str(e)) from e
    return written


def load_summary(path: Union[str, Path]) -> ResultSummary:
    """Read a ``result.json`` written by `emit_summary`.

    Raises:
        ReportError: if the file is unreadable or malformed.
    """
    path = Path(path)
    try:
        return ResultSummary.model_validate_json(path.read_text())
    except (OSError, pydantic.ValidationError) as e:
        logger.error("cannot load result %s", path)
        raise ReportError(path, str(e)) from e
