"""
BatchEnsemble uncertainty toolkit - Main Entry Point

Usage:
    uv run python main.py train --config experiment.json
    uv run python main.py synth ackley --n 2000 --output data/ackley.csv
    uv run python main.py ablate adapters --config experiment.json
    uv run python main.py report runs/a runs/b --output runs/combined

Exit codes: 0 success, 1 configuration error, 2 data error, 3 numerical failure.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

from pydantic import ValidationError

from data import DatasetSchema, gen_ackley, gen_ar1, gen_random_walk, load_table, make_shift_split, series_frame
from errors import ConfigError, DataError, NumericalError
from experiment_config import ExperimentConfig, create_default_config
from experiment_manager import ABLATION_SUITES, ExperimentManager, report, run_ablation, run_experiment
from forecast import write_forecast_csv
from numcore import Rng

logger = logging.getLogger("main")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3


def _add_experiment_flags(parser: argparse.ArgumentParser):
    """Flags that override the experiment config; defaults come from the file"""
    parser.add_argument("--config", type=Path, help="experiment JSON file (default experiment when omitted)")
    parser.add_argument("--name")
    parser.add_argument("--task", choices=["regression", "classification", "timeseries"])
    parser.add_argument("--method", choices=["batch_ensemble", "mc_dropout", "deep_ensemble", "single"])
    parser.add_argument("--data", help="CSV dataset (tabular with --manifest, else a series)")
    parser.add_argument("--manifest", help="dataset manifest JSON for --data")
    parser.add_argument("--kind", choices=["csv", "ackley", "ar1", "random_walk", "series_csv"])
    parser.add_argument("--seeds", type=int, nargs="+")
    parser.add_argument("--epochs", type=int, help="training epochs (500)")
    parser.add_argument("--lr", type=float, help="Adam learning rate (0.005)")
    parser.add_argument("--batch-size", type=int, help="minibatch size (64)")
    parser.add_argument("--ensemble-size", type=int, help="K members (10)")
    parser.add_argument("--dropout", type=float, help="MC dropout rate (0.1)")
    parser.add_argument("--hidden", type=int, nargs="+", help="hidden widths (32 32)")
    parser.add_argument("--shift", action="store_true", default=None, help="tail-quantile shift split")
    parser.add_argument("--output-dir")
    parser.add_argument("--workers", type=int)


def load_experiment(args: argparse.Namespace) -> ExperimentConfig:
    """Config file (or the default) with command-line overrides applied"""
    config = ExperimentConfig.from_file(args.config) if args.config else create_default_config()
    data: Dict[str, Any] = config.model_dump()

    for flag, key in (
        ("name", "name"),
        ("task", "task"),
        ("method", "method"),
        ("seeds", "seeds"),
        ("shift", "shift"),
        ("output_dir", "output_dir"),
        ("workers", "workers"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            data[key] = value

    if args.data:
        data["dataset"] = {**data["dataset"], "path": args.data}
        data["dataset"]["kind"] = "csv" if args.manifest else "series_csv"
    if args.manifest:
        data["dataset"]["manifest"] = args.manifest
    if args.kind:
        data["dataset"] = {**data["dataset"], "kind": args.kind}

    for flag, key in (("epochs", "epochs"), ("lr", "learning_rate"), ("batch_size", "batch_size")):
        value = getattr(args, flag, None)
        if value is not None:
            data["training"][key] = value
    for flag, key in (("ensemble_size", "ensemble_size"), ("dropout", "dropout_rate"), ("hidden", "hidden_dims")):
        value = getattr(args, flag, None)
        if value is not None:
            data["network"][key] = value
    return ExperimentConfig.model_validate(data)


def cmd_train(args: argparse.Namespace) -> int:
    result = run_experiment(load_experiment(args))
    print(f"Run directory: {result.run_dir}")
    print(result.summary[result.summary["subset"] == "all"].to_string(index=False))
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    manager = ExperimentManager(load_experiment(args))
    metrics = manager.evaluate_checkpoint(args.checkpoint)
    text = metrics.model_dump_json(indent=2)
    if args.output:
        Path(args.output).parent.mkdir(parents=True, exist_ok=True)
        Path(args.output).write_text(text, encoding="utf-8")
        print(f"Metrics written to {args.output}")
    else:
        print(text)
    return EXIT_OK


def cmd_forecast(args: argparse.Namespace) -> int:
    config = load_experiment(args)
    overrides = {}
    if args.paths is not None:
        overrides["total_paths"] = args.paths
    if args.noise_scale is not None:
        overrides["noise_scale"] = args.noise_scale
    if overrides:
        config = config.model_copy(update={"forecast": {**config.forecast, **overrides}})
    manager = ExperimentManager(config)
    result = manager.forecast_checkpoint(args.checkpoint, future=args.future)
    write_forecast_csv(result, args.output, manager.forecast_config.coverages)
    print(f"Forecast written to {args.output}")
    return EXIT_OK


def cmd_shift_split(args: argparse.Namespace) -> int:
    schema = DatasetSchema.from_file(args.manifest)
    table = load_table(args.data, schema)
    _, _, shift_report = make_shift_split(table, Rng(args.seed, "data").stream("shift"), args.q, args.features)
    path = shift_report.write(args.output)
    print(f"Shift report written to {path}")
    return EXIT_OK


def cmd_synth(args: argparse.Namespace) -> int:
    rng = Rng(args.seed, "data").stream("synth")
    output = Path(args.output)
    output.parent.mkdir(parents=True, exist_ok=True)
    if args.generator == "ackley":
        frame = gen_ackley(args.n, rng, d=args.d, task=args.task)
        schema = DatasetSchema(name=output.stem, task=args.task, target="y")
        manifest = output.with_suffix(".manifest.json")
        manifest.write_text(schema.model_dump_json(indent=2), encoding="utf-8")
        print(f"Manifest written to {manifest}")
    elif args.generator == "ar1":
        frame = series_frame(gen_ar1(args.n, rng, phi=args.phi, sigma=args.sigma))
    else:
        frame = series_frame(gen_random_walk(args.n, rng, sigma=args.sigma))
    frame.to_csv(output, index=False)
    print(f"{len(frame)} rows written to {output}")
    return EXIT_OK


def cmd_ablate(args: argparse.Namespace) -> int:
    table = run_ablation(args.suite, load_experiment(args))
    print(table.to_string(index=False))
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    combined = report(args.runs, args.output)
    for warning in combined.warnings:
        print(f"Warning: {warning}")
    for missing in combined.missing:
        print(f"Missing run: {missing}")
    print(f"Combined report written to {args.output}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="main.py", description="BatchEnsemble uncertainty experiments")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="debug logging (per-epoch losses)")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="warnings and errors only")
    commands = parser.add_subparsers(dest="command", required=True)

    train = commands.add_parser("train", help="train and evaluate every seed")
    _add_experiment_flags(train)
    train.set_defaults(handler=cmd_train)

    evaluate = commands.add_parser("evaluate", help="evaluate a saved model")
    _add_experiment_flags(evaluate)
    evaluate.add_argument("--checkpoint", type=Path, required=True)
    evaluate.add_argument("--output", type=Path, help="metrics JSON (stdout when omitted)")
    evaluate.set_defaults(handler=cmd_evaluate)

    forecast = commands.add_parser("forecast", help="ancestral-sampling forecast from a saved model")
    _add_experiment_flags(forecast)
    forecast.add_argument("--checkpoint", type=Path, required=True)
    forecast.add_argument("--output", type=Path, default=Path("forecast.csv"))
    forecast.add_argument("--paths", type=int, help="sample paths over all members (2000)")
    forecast.add_argument("--noise-scale", type=float, help="noise multiplier, 0 for mean rollouts (1.0)")
    forecast.add_argument("--future", action="store_true", help="forecast past the end of the series")
    forecast.set_defaults(handler=cmd_forecast)

    shift = commands.add_parser("shift-split", help="build a tail-quantile shift split and report it")
    shift.add_argument("--data", type=Path, required=True)
    shift.add_argument("--manifest", type=Path, required=True)
    shift.add_argument("--q", type=float, default=0.025, help="tail quantile per side (0.025)")
    shift.add_argument("--features", type=int, default=2, help="features defining the tails (2)")
    shift.add_argument("--seed", type=int, default=0)
    shift.add_argument("--output", type=Path, default=Path("shift_report.json"))
    shift.set_defaults(handler=cmd_shift_split)

    synth = commands.add_parser("synth", help="write a synthetic dataset")
    synth.add_argument("generator", choices=["ackley", "ar1", "random_walk"])
    synth.add_argument("--n", type=int, default=2000)
    synth.add_argument("--d", type=int, default=10)
    synth.add_argument("--task", choices=["regression", "classification"], default="regression")
    synth.add_argument("--phi", type=float, default=0.8)
    synth.add_argument("--sigma", type=float, default=1.0)
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--output", type=Path, required=True)
    synth.set_defaults(handler=cmd_synth)

    ablate = commands.add_parser("ablate", help="run an ablation suite")
    ablate.add_argument("suite", choices=ABLATION_SUITES)
    _add_experiment_flags(ablate)
    ablate.set_defaults(handler=cmd_ablate)

    combine = commands.add_parser("report", help="merge run directories into one table")
    combine.add_argument("runs", nargs="+", type=Path)
    combine.add_argument("--output", type=Path, default=Path("report"))
    combine.set_defaults(handler=cmd_report)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format="%(asctime)s - %(name)s - %(levelname)s - %(message)s")

    try:
        return args.handler(args)
    except (ConfigError, ValidationError) as exc:
        logger.error(f"Configuration error: {exc}")
        return EXIT_CONFIG
    except DataError as exc:
        logger.error(f"Data error: {exc}")
        return EXIT_DATA
    except NumericalError as exc:
        logger.error(f"Numerical failure: {exc}")
        return EXIT_NUMERICAL
    except Exception:
        logger.exception("Unexpected error")
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
