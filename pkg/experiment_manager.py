"""
Runs experiments end to end: load data, train every seed, evaluate the metric
suite, write artifacts, enumerate ablation suites and merge run directories
into combined tables.

Run directory layout:
    config.json, metrics_seed_<s>.json, model_seed_<s>.npz, summary.csv,
    losses.csv, calibration.svg, selective.svg, plus reliability.svg /
    reliability.csv (classification), forecast.csv (time series) and
    shift_report.json (shift splits).
"""

import itertools
import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import ValidationError

from base_model import BaseModel
from data import (
    DatasetSchema,
    SeriesDataset,
    ShiftReport,
    TabularDataset,
    ackley_arrays,
    gen_ackley,
    gen_ar1,
    gen_random_walk,
    load_series,
    load_table,
    make_shift_split,
    random_split,
    series_from_values,
    table_from_arrays,
)
from errors import ConfigError, DataError
from experiment_config import ExperimentConfig
from forecast import ForecastResult, forecast_windows, write_forecast_csv
from layers import ADAPTERS
from metrics import (
    SELECTIVE_LEVELS,
    CoverageGrid,
    MetricsReport,
    SubsetMetrics,
    classification_metrics,
    forecast_metrics,
    regression_metrics,
    reliability_table,
    summarize_reports,
)
from models import build, checkpoint_seed, load_checkpoint, param_count, save_checkpoint
from numcore import Rng
from plots import calibration_svg, reliability_svg, selective_svg
from recurrent import GATES
from trainer import Trainer

logger = logging.getLogger(__name__)

ABLATION_SUITES = ("adapters", "gates", "layers", "init")
INIT_LAMBDAS = (1e-4, 1e-3, 1e-2)
LAYERS_SUITE_DEPTH = 10

Dataset = Union[TabularDataset, SeriesDataset]


@dataclass
class SeedOutcome:
    """Everything one seed produced"""

    seed: int
    loss_trace: pd.DataFrame
    report: Optional[MetricsReport] = None

    # Pooled test probabilities and labels (classification)
    probs: Optional[np.ndarray] = None
    labels: Optional[np.ndarray] = None

    # Test-window forecast (time series)
    forecast: Optional[ForecastResult] = None


@dataclass
class ExperimentResult:
    """Per-seed reports and their mean/SE summary"""

    config: ExperimentConfig
    run_dir: Path
    reports: List[MetricsReport]
    summary: pd.DataFrame
    shift_report: Optional[ShiftReport] = None

    @property
    def param_count(self) -> int:
        return self.reports[0].param_count


@dataclass
class CombinedReport:
    """Merged run tables plus the runs that could not be read"""

    table: pd.DataFrame
    missing: List[str] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)


class ExperimentManager:
    """Trains, evaluates and writes artifacts for one ExperimentConfig"""

    def __init__(self, config: ExperimentConfig):
        """
        Args:
            config: validated experiment description
        """
        self.config = config
        self.train_config = config.build_train_config()
        self.forecast_config = config.build_forecast_config()
        self.grid = CoverageGrid.evenly_spaced(config.coverage_levels)

    def log(self, message: str):
        logger.info(f"{self.config.name} - {message}")

    # ------------------------------------------------------------------
    # Data and models
    # ------------------------------------------------------------------

    def load_data(self) -> Tuple[Dataset, Optional[ShiftReport]]:
        """
        Load the referenced dataset and split it with `data_seed`.

        Returns:
            (dataset, shift report or None)
        """
        ref = self.config.dataset
        rng = Rng(self.config.data_seed, "data")
        train = self.train_config

        if ref.kind in ("ar1", "random_walk"):
            if ref.kind == "ar1":
                values = gen_ar1(ref.n, rng.stream("synth"), phi=ref.phi, sigma=ref.sigma)
            else:
                values = gen_random_walk(ref.n, rng.stream("synth"), sigma=ref.sigma)
            return series_from_values(values, train.context, train.horizon, name=ref.kind), None
        if ref.kind == "series_csv":
            return load_series(ref.path, ref.column, train.context, train.horizon), None

        if ref.kind == "ackley":
            frame = gen_ackley(ref.n, rng.stream("synth"), d=ref.d, task=self.config.task)
            x, y = ackley_arrays(frame)
            table = table_from_arrays(x, y, self.config.task, name="ackley")
        else:
            schema = DatasetSchema.from_file(ref.manifest)
            if schema.task != self.config.task:
                raise ConfigError(f"Manifest {ref.manifest} declares task {schema.task}, config asks for {self.config.task}")
            table = load_table(ref.path, schema)

        if self.config.shift:
            dataset, _, report = make_shift_split(
                table, rng.stream("shift"), self.config.shift_quantile, self.config.shift_features
            )
            return dataset, report
        return random_split(table, rng.stream("split")), None

    def build_model(self, dataset: Dataset, seed: int) -> BaseModel:
        num_classes = dataset.num_classes if self.config.task == "classification" else 2
        model_config = self.config.build_model_config(dataset.input_dim, num_classes)
        return build(model_config, Rng(seed, "init"))

    # ------------------------------------------------------------------
    # Evaluation
    # ------------------------------------------------------------------

    def _subsets(self, dataset: TabularDataset) -> Dict[str, np.ndarray]:
        subsets = {"all": np.arange(dataset.y_test.size)}
        if dataset.test_shifted is not None:
            for name, mask in (("id", ~dataset.test_shifted), ("shift", dataset.test_shifted)):
                if mask.any():
                    subsets[name] = np.flatnonzero(mask)
                else:
                    logger.warning(f"{self.config.name} - {name} subset of the test set is empty, skipped")
        return subsets

    def evaluate(
        self,
        model: BaseModel,
        dataset: Dataset,
        seed: int,
        train_seconds: float = 0.0,
    ) -> SeedOutcome:
        """
        Score a trained model on the test split (and its ID/shift subsets).

        Args:
            model: trained model
            dataset: data the model was trained on
            seed: seed of the run; MC dropout and path sampling draw from it
            train_seconds: wall-clock training time for the report

        Returns:
            SeedOutcome without a loss trace
        """
        rng = Rng(seed, "evaluate")
        outcome = SeedOutcome(seed=seed, loss_trace=pd.DataFrame())
        subsets: Dict[str, SubsetMetrics] = {}
        levels = list(SELECTIVE_LEVELS)

        if isinstance(dataset, SeriesDataset):
            contexts, targets = dataset.test_windows()
            result = forecast_windows(model, contexts, self.forecast_config, rng.stream("forecast"))
            outcome.forecast = result
            subsets["all"] = forecast_metrics(
                result.mean,
                result.variance,
                result.within_member,
                result.between_member,
                targets,
                self.grid,
                levels,
            )
        else:
            prediction = model.predict(dataset.x_test, rng.stream("predict"))
            for name, idx in self._subsets(dataset).items():
                if self.config.task == "classification":
                    subsets[name] = classification_metrics(
                        prediction.member_probs[:, idx], dataset.y_test[idx], self.config.n_bins, levels
                    )
                else:
                    subsets[name] = regression_metrics(
                        prediction.member_mean[:, idx],
                        prediction.member_var[:, idx],
                        dataset.y_test[idx],
                        self.grid,
                        levels,
                    )
            if self.config.task == "classification":
                outcome.probs = prediction.probs
                outcome.labels = dataset.y_test

        outcome.report = MetricsReport(
            dataset=dataset.name,
            task=self.config.task,
            method=self.config.method,
            seed=seed,
            param_count=param_count(model),
            coverage_levels=[] if self.config.task == "classification" else self.grid.levels.tolist(),
            selective_levels=levels,
            subsets=subsets,
            train_seconds=train_seconds,
        )
        return outcome

    def evaluate_checkpoint(self, checkpoint: Union[str, Path]) -> MetricsReport:
        """Evaluate a saved model on this config's data"""
        model = load_checkpoint(checkpoint)
        if model.config.task != self.config.task:
            raise ConfigError(f"Checkpoint task {model.config.task} does not match config task {self.config.task}")
        dataset, _ = self.load_data()
        if dataset.input_dim != model.config.input_dim:
            raise DataError(f"Data has {dataset.input_dim} features, checkpoint expects {model.config.input_dim}")
        return self.evaluate(model, dataset, checkpoint_seed(checkpoint)).report

    def forecast_checkpoint(self, checkpoint: Union[str, Path], future: bool = False) -> ForecastResult:
        """
        Forecast with a saved time-series model.

        Args:
            checkpoint: model archive
            future: forecast past the end of the series from its last L values
                instead of every test window

        Returns:
            ForecastResult in scaled units
        """
        model = load_checkpoint(checkpoint)
        if model.config.task != "timeseries":
            raise ConfigError("forecasting needs a time-series checkpoint")
        dataset, _ = self.load_data()
        rng = Rng(checkpoint_seed(checkpoint), "evaluate").stream("forecast")
        if future:
            contexts = dataset.values[-self.forecast_config.context :][None, :]
        else:
            contexts, _ = dataset.test_windows()
        return forecast_windows(model, contexts, self.forecast_config, rng)

    # ------------------------------------------------------------------
    # Runs
    # ------------------------------------------------------------------

    def run_seed(self, dataset: Dataset, seed: int) -> SeedOutcome:
        """Build, train, evaluate and checkpoint one seed"""
        self.log(f"seed {seed} - training {self.config.method}")
        model = self.build_model(dataset, seed)
        trained = Trainer(self.train_config).train(model, dataset, Rng(seed, "train"))
        outcome = self.evaluate(model, dataset, seed, trained.elapsed_seconds)
        outcome.loss_trace = trained.loss_trace.assign(seed=seed)[["seed", "unit", "epoch", "loss", "penalty"]]
        save_checkpoint(model, self.config.run_dir / f"model_seed_{seed}.npz", seed)
        self.log(f"seed {seed} - done in {trained.elapsed_seconds:.1f}s")
        return outcome

    def run_experiment(self) -> ExperimentResult:
        """
        Train and evaluate every seed, then write the run directory.

        Seeds run on up to `workers` threads; results are ordered by seed.
        """
        run_dir = self.config.run_dir
        run_dir.mkdir(parents=True, exist_ok=True)
        self.config.write(run_dir / "config.json")
        dataset, shift_report = self.load_data()
        if shift_report is not None:
            shift_report.write(run_dir / "shift_report.json")

        seeds = sorted(self.config.seeds)
        if self.config.workers > 1 and len(seeds) > 1:
            with ThreadPoolExecutor(max_workers=min(self.config.workers, len(seeds))) as executor:
                futures = {seed: executor.submit(self.run_seed, dataset, seed) for seed in seeds}
                outcomes = [futures[seed].result() for seed in seeds]
        else:
            outcomes = [self.run_seed(dataset, seed) for seed in seeds]

        reports = [o.report for o in outcomes]
        summary = summarize_reports(reports)
        self._write_artifacts(run_dir, outcomes, summary)
        self.log(f"artifacts written to {run_dir}")
        return ExperimentResult(
            config=self.config,
            run_dir=run_dir,
            reports=reports,
            summary=summary,
            shift_report=shift_report,
        )

    def _write_artifacts(self, run_dir: Path, outcomes: List[SeedOutcome], summary: pd.DataFrame):
        for outcome in outcomes:
            path = run_dir / f"metrics_seed_{outcome.seed}.json"
            path.write_text(outcome.report.model_dump_json(indent=2), encoding="utf-8")
        summary.to_csv(run_dir / "summary.csv", index=False)
        pd.concat([o.loss_trace for o in outcomes], ignore_index=True).to_csv(run_dir / "losses.csv", index=False)

        subsets = list(outcomes[0].report.subsets)
        label = self.config.method
        selective = {
            f"{label} ({s})": np.mean([o.report.subsets[s].selective for o in outcomes], axis=0) for s in subsets
        }
        if self.config.task == "classification":
            table = reliability_table(
                np.concatenate([o.probs for o in outcomes]),
                np.concatenate([o.labels for o in outcomes]),
                self.config.n_bins,
            )
            table.to_csv(run_dir / "reliability.csv", index=False)
            reliability_svg(table, run_dir / "reliability.svg")
            reliability_svg(table, run_dir / "calibration.svg", title="Confidence calibration")
            metric_name, best = "Accuracy", max
        else:
            coverage = {
                f"{label} ({s})": np.mean([o.report.subsets[s].coverage for o in outcomes], axis=0) for s in subsets
            }
            calibration_svg(self.grid.levels, coverage, run_dir / "calibration.svg")
            metric_name, best = "RMSE", min

        reference = None
        if self.config.method == "batch_ensemble":
            reference = float(best(selective[f"{label} (all)"]))
        selective_svg(SELECTIVE_LEVELS, selective, run_dir / "selective.svg", metric_name, reference)

        if self.config.task == "timeseries":
            write_forecast_csv(outcomes[0].forecast, run_dir / "forecast.csv", self.forecast_config.coverages)


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    return ExperimentManager(config).run_experiment()


# ----------------------------------------------------------------------
# Ablations
# ----------------------------------------------------------------------


def _slug(label: str) -> str:
    return re.sub(r"[^A-Za-z0-9]+", "_", label).strip("_") or "variant"


def _variant(base: ExperimentConfig, suite: str, label: str, network: Dict) -> ExperimentConfig:
    data = base.model_dump()
    data["method"] = "batch_ensemble"
    data["network"] = {**base.network, **network}
    data["output_dir"] = str(base.run_dir / f"ablation_{suite}")
    data["name"] = _slug(label)
    data["workers"] = 1
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc


def ablation_variants(suite: str, base: ExperimentConfig) -> List[Tuple[str, ExperimentConfig]]:
    """
    Enumerate the variants of an ablation suite.

    adapters: every subset of {R, S, B}, the empty one included (8 variants).
    gates: every non-empty subset of the GRUBE gates (7, time series only).
    layers: nine hidden layers of the base width, BatchEnsemble on the last
        k in 1..10 layers (10, tabular only).
    init: random-sign and orthogonal adapters, each without and with the
        orthogonality penalty at every strength in INIT_LAMBDAS (8).
    """
    if suite not in ABLATION_SUITES:
        raise ConfigError(f"Unknown ablation suite {suite!r}; expected one of {ABLATION_SUITES}")
    variants: List[Tuple[str, Dict]] = []

    if suite == "adapters":
        for size in range(len(ADAPTERS) + 1):
            for subset in itertools.combinations(ADAPTERS, size):
                variants.append(("".join(subset) or "none", {"adapter_mask": list(subset)}))
    elif suite == "gates":
        if base.task != "timeseries":
            raise ConfigError("The gates suite needs a time-series experiment")
        for size in range(1, len(GATES) + 1):
            for subset in itertools.combinations(GATES, size):
                variants.append(("".join(subset), {"gate_mask": list(subset)}))
    elif suite == "layers":
        if base.task == "timeseries":
            raise ConfigError("The layers suite applies to tabular MLPs")
        width = int(base.network.get("hidden_dims", [32])[0])
        hidden = [width] * (LAYERS_SUITE_DEPTH - 1)
        for k in range(1, LAYERS_SUITE_DEPTH + 1):
            variants.append((f"last {k}", {"hidden_dims": hidden, "be_layer_count": k}))
    else:
        for scheme, tag in (("random_sign", ""), ("orthogonal", "O")):
            variants.append((f"BE({tag})" if tag else "BE", {"init_scheme": scheme, "ortho_lambda": 0.0}))
            for strength in INIT_LAMBDAS:
                inner = f"{tag},lambda={strength:g}" if tag else f"lambda={strength:g}"
                variants.append((f"BE({inner})", {"init_scheme": scheme, "ortho_lambda": strength}))

    return [(label, _variant(base, suite, label, network)) for label, network in variants]


def run_ablation(suite: str, base: ExperimentConfig) -> pd.DataFrame:
    """
    Run every variant of a suite and tabulate them side by side.

    Writes ablation.csv and ablation.md to <run_dir>/ablation_<suite>/.

    Returns:
        One row per variant: variant, param_count and mean/SE of every
        scalar metric on the full test set
    """
    variants = ablation_variants(suite, base)
    logger.info(f"{base.name} - ablation {suite}: {len(variants)} variants")

    if base.workers > 1:
        with ThreadPoolExecutor(max_workers=min(base.workers, len(variants))) as executor:
            futures = [executor.submit(run_experiment, cfg) for _, cfg in variants]
            results = [future.result() for future in futures]
    else:
        results = [run_experiment(cfg) for _, cfg in variants]

    rows = []
    for (label, _), result in zip(variants, results):
        row = {"variant": label, "param_count": result.param_count}
        summary = result.summary[(result.summary["subset"] == "all") & (result.summary["metric"] != "param_count")]
        for record in summary.itertuples(index=False):
            row[record.metric] = record.mean
            row[f"{record.metric}_se"] = record.se
        rows.append(row)
    table = pd.DataFrame(rows)

    out_dir = base.run_dir / f"ablation_{suite}"
    out_dir.mkdir(parents=True, exist_ok=True)
    table.to_csv(out_dir / "ablation.csv", index=False)
    markdown = f"# Ablation: {suite}\n\n{table.to_markdown(index=False, floatfmt='.4f')}\n"
    (out_dir / "ablation.md").write_text(markdown, encoding="utf-8")
    logger.info(f"{base.name} - ablation table written to {out_dir}")
    return table


# ----------------------------------------------------------------------
# Combined reports
# ----------------------------------------------------------------------


def _read_run(run_dir: Path) -> Tuple[str, str, int, pd.DataFrame]:
    config = json.loads((run_dir / "config.json").read_text(encoding="utf-8"))
    summary = pd.read_csv(run_dir / "summary.csv")
    return config.get("name", run_dir.name), config.get("method", ""), len(config.get("seeds", [])), summary


def report(run_dirs: Sequence[Union[str, Path]], output_dir: Union[str, Path]) -> CombinedReport:
    """
    Merge finished runs into one table.

    Runs with ID and shift subsets get `id`, `shift` and `delta = shift - id`
    columns; every run carries its full-test-set value in `all`. Missing or
    unreadable runs are listed and the rest is still reported.
    """
    rows, missing, seed_counts = [], [], {}
    for entry in run_dirs:
        run_dir = Path(entry)
        if not (run_dir / "config.json").is_file() or not (run_dir / "summary.csv").is_file():
            logger.warning(f"Report - run {run_dir} is missing or incomplete, skipped")
            missing.append(str(run_dir))
            continue
        name, method, seeds, summary = _read_run(run_dir)
        seed_counts[name] = seeds
        wide = summary.pivot(index="metric", columns="subset", values="mean")
        for metric, values in wide.iterrows():
            row = {"run": name, "method": method, "metric": metric, "all": values.get("all", np.nan)}
            if "id" in values.index and "shift" in values.index:
                row["id"] = values["id"]
                row["shift"] = values["shift"]
                row["delta"] = values["shift"] - values["id"]
            rows.append(row)

    table = pd.DataFrame(rows, columns=["run", "method", "metric", "all", "id", "shift", "delta"])
    warnings = []
    if len(set(seed_counts.values())) > 1:
        counts = ", ".join(f"{name}: {count}" for name, count in sorted(seed_counts.items()))
        warnings.append(f"runs use different numbers of seeds ({counts})")
        logger.warning(f"Report - {warnings[-1]}")

    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    table.to_csv(output_dir / "combined.csv", index=False)
    header = ["# Combined report", ""]
    header += [f"> Warning: {w}" for w in warnings]
    header += [f"> Missing run: {m}" for m in missing]
    body = table.dropna(axis=1, how="all").to_markdown(index=False, floatfmt=".4f") if rows else "_no runs_"
    (output_dir / "combined.md").write_text("\n".join(header + ["", body, ""]), encoding="utf-8")
    return CombinedReport(table=table, missing=missing, warnings=warnings)
