# Copyright 2026 The fairfed Authors.
# See LICENSE file for licensing details.
"""Command-line entry point: ``fairfed <subcommand> [options]``.

Subcommands: synth, partition, train, tune-lambda, tune-gamma, run, report.
Without ``--config`` the synthetic demo case (``--case``, default 1) is used; flags
override file values. Exit codes: 0 on success, 1 on a fairfed error, 2 on bad
arguments.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

import pydantic

from . import tuning
from .config import ConfigError, ExperimentConfig, config_dict, load_config, with_seed
from .data import DataError, generate_synthetic, to_frame, write_sites
from .federation import AggregationError
from .harness import ExperimentError, demo_config, load_sites, prepare_clients, run_experiment
from .interfaces.utils import MessageValidationError
from .metrics import MetricsError
from .objective import EmptyBatchError
from .report import (
    ReportError,
    emit_report,
    emit_summary,
    load_summary,
    render_markdown,
    summarize,
)
from .trainer import DivergenceError, SweepError, write_sweep_trace
from .types import ROSTER_ORDER

logger = logging.getLogger(__name__)

#: Errors reported as a one-line message with exit code 1.
FAIRFED_ERRORS = (
    AggregationError,
    ConfigError,
    DataError,
    DivergenceError,
    EmptyBatchError,
    ExperimentError,
    MessageValidationError,
    MetricsError,
    ReportError,
    SweepError,
    tuning.GammaSearchError,
)

LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")


def _csv_list(text: str) -> List[str]:
    return [item.strip() for item in text.split(",") if item.strip()]


def _common(parser: argparse.ArgumentParser):
    parser.add_argument("--config", type=Path, help="experiment config file (YAML)")
    parser.add_argument(
        "--case",
        type=int,
        default=1,
        choices=[1, 2, 3, 4],
        help="synthetic demo case used without --config",
    )
    parser.add_argument("--seed", type=int, help="seed for data, partition, split and training")
    parser.add_argument("--out", type=Path, help="output directory")
    parser.add_argument("--log-level", default="INFO", choices=LOG_LEVELS)


def _model_options(parser: argparse.ArgumentParser):
    parser.add_argument("--penalty-form", choices=["squared-average", "signed-average"])
    parser.add_argument("--lambda-policy", choices=["min", "max"])
    parser.add_argument("--lambda", dest="lambda_", type=float, help="pin lambda")
    parser.add_argument("--gamma", type=float, help="pin gamma")
    parser.add_argument(
        "--format", dest="formats", type=_csv_list, help="comma-separated formats (csv,md)"
    )


def build_parser() -> argparse.ArgumentParser:
    """The argument parser with every subcommand."""
    parser = argparse.ArgumentParser(
        prog="fairfed", description="Fairness-aware federated logistic regression."
    )
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", help="write a synthetic cohort as CSV")
    _common(synth)
    synth.add_argument("--n", type=int, help="number of rows")
    synth.add_argument("--d", type=int, help="number of features")
    synth.add_argument("--bias", type=float, help="group effect on the outcome log-odds")
    synth.set_defaults(handler=cmd_synth)

    part = sub.add_parser("partition", help="cut the cohort into site CSVs")
    _common(part)
    part.set_defaults(handler=cmd_partition)

    train = sub.add_parser("train", help="train and evaluate one roster model")
    _common(train)
    _model_options(train)
    train.add_argument("--model", required=True, choices=list(ROSTER_ORDER))
    train.set_defaults(handler=cmd_train)

    tune_lambda = sub.add_parser("tune-lambda", help="per-client lambda sweep")
    _common(tune_lambda)
    _model_options(tune_lambda)
    tune_lambda.set_defaults(handler=cmd_tune_lambda)

    tune_gamma = sub.add_parser("tune-gamma", help="two-step gamma search")
    _common(tune_gamma)
    _model_options(tune_gamma)
    tune_gamma.add_argument("--framework", default="fedavg", choices=["fedavg", "perfedavg"])
    tune_gamma.set_defaults(handler=cmd_tune_gamma)

    run = sub.add_parser("run", help="run the full experiment and write the report")
    _common(run)
    _model_options(run)
    run.add_argument("--roster", type=_csv_list, help="comma-separated roster models")
    run.set_defaults(handler=cmd_run)

    report = sub.add_parser("report", help="re-render a saved result.json")
    report.add_argument("result", type=Path, help="path to result.json")
    report.add_argument("--out", type=Path, help="output directory (default: alongside)")
    report.add_argument("--format", dest="formats", type=_csv_list, default=["csv", "md"])
    report.add_argument("--log-level", default="INFO", choices=LOG_LEVELS)
    report.set_defaults(handler=cmd_report)
    return parser


def resolve_config(
    args: argparse.Namespace, parser: argparse.ArgumentParser
) -> ExperimentConfig:
    """Config file (or demo case) with command-line overrides applied."""
    cfg = load_config(args.config) if args.config else demo_config(args.case)
    if args.seed is not None:
        cfg = with_seed(cfg, args.seed)

    raw: Dict[str, Any] = config_dict(cfg)
    options = vars(args)
    if options.get("out") is not None:
        raw["output_dir"] = str(args.out)
    if options.get("penalty_form"):
        raw["federation"]["train"]["penalty"]["form"] = args.penalty_form
    if options.get("lambda_policy"):
        raw["tuning"]["lambda_policy"] = args.lambda_policy
    if options.get("lambda_") is not None:
        raw["pinned_lambda"] = args.lambda_
    if options.get("gamma") is not None:
        raw["pinned_gamma"] = args.gamma
    if options.get("formats"):
        raw["formats"] = args.formats
    if options.get("roster"):
        raw["roster"] = args.roster
    if options.get("model"):
        raw["roster"] = [args.model]
    try:
        return ExperimentConfig.model_validate(raw)
    except pydantic.ValidationError as e:
        parser.error(f"invalid option: {e}")
        raise


def cmd_synth(cfg: ExperimentConfig, args: argparse.Namespace) -> int:
    """Write the synthetic cohort to ``<out>/cohort.csv``."""
    spec = cfg.data.synthetic
    if spec is None:
        raise ConfigError(args.config or "<demo case>", "synth needs a synthetic data source")
    n = args.n if args.n is not None else spec.n
    d = args.d if args.d is not None else spec.d
    bias = args.bias if args.bias is not None else spec.bias
    cohort = generate_synthetic(n, d, bias, spec.seed)
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    path = cfg.output_dir / "cohort.csv"
    to_frame(cohort).to_csv(path, index=False)
    print(path)
    return 0


def cmd_partition(cfg: ExperimentConfig, args: argparse.Namespace) -> int:
    """Write one CSV per site plus a manifest."""
    print(write_sites(load_sites(cfg), cfg.output_dir))
    return 0


def cmd_train(cfg: ExperimentConfig, args: argparse.Namespace) -> int:
    """Train one roster model and write its report."""
    result = run_experiment(cfg)
    emit_report(result)
    print(render_markdown(summarize(result)), end="")
    return 0


def cmd_tune_lambda(cfg: ExperimentConfig, args: argparse.Namespace) -> int:
    """Sweep lambda on every client and print lambda_k and the candidates."""
    clients = prepare_clients(cfg).clients
    sweeps = tuning.client_lambdas(clients, cfg.federation, cfg.tuning.sweep)
    for client_id, sweep in enumerate(sweeps):
        write_sweep_trace(
            sweep.trace,
            cfg.output_dir / f"lambda_sweep_client_{client_id + 1}.csv",
            metric=cfg.tuning.sweep.metric,
        )
        print(f"client {client_id + 1}: lambda_k = {sweep.lambda_k:g}")
    candidates = tuning.lambda_candidates(
        [s.lambda_k for s in sweeps], cfg.tuning.lambda_policy, cfg.tuning.lambda_count
    )
    print("candidates: " + ", ".join(f"{c:g}" for c in candidates))
    return 0


def cmd_tune_gamma(cfg: ExperimentConfig, args: argparse.Namespace) -> int:
    """Run the gamma search (after the lambda sweep unless lambda is pinned)."""
    clients = prepare_clients(cfg).clients
    fed = cfg.federation.model_copy(update={"framework": args.framework})
    result = tuning.tune(clients, fed, cfg.tuning, lambda_=cfg.pinned_lambda)
    path = tuning.write_audit(
        result.searches, cfg.output_dir / f"gamma_audit_{args.framework}.csv"
    )
    print(f"lambda = {result.lambda_:g}, gamma = {result.gamma:g} (audit: {path})")
    return 0


def cmd_run(cfg: ExperimentConfig, args: argparse.Namespace) -> int:
    """Run every roster model and write the report."""
    for path in emit_report(run_experiment(cfg)):
        print(path)
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    """Re-render a saved result."""
    summary = load_summary(args.result)
    out = args.out if args.out is not None else args.result.parent
    for path in emit_summary(summary, out, args.formats):
        print(path)
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Parse ``argv``, run the subcommand and return the exit code."""
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=args.log_level, format="%(asctime)s %(levelname)s %(name)s: %(message)s"
    )
    handler: Callable[..., int] = args.handler
    try:
        if args.command == "report":
            return handler(args)
        cfg = resolve_config(args, parser)
        return handler(cfg, args)
    except FAIRFED_ERRORS as e:
        print(f"fairfed: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
