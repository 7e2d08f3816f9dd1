"""Test experiment configs, end-to-end runs, ablation suites, combined reports and the CLI."""

import json

import numpy as np
import pandas as pd
import pytest
from pydantic import ValidationError
from scipy.stats import spearmanr

import main as cli
from errors import ConfigError, NumericalError
from experiment_config import DatasetRef, ExperimentConfig, create_custom_config, create_default_config
from experiment_manager import ExperimentManager, ablation_variants, report, run_ablation, run_experiment
from model_config import ModelConfig
from models import build, param_count
from numcore import Rng


def tiny(tmp_path, name="tiny", task="regression", method="batch_ensemble", **overrides):
    kind = "ar1" if task == "timeseries" else "ackley"
    data = {
        "name": name,
        "dataset": {"kind": kind, "n": 150 if task == "timeseries" else 200, "d": 3},
        "task": task,
        "method": method,
        "network": {"hidden_dims": [8], "ensemble_size": 3, "recurrent_hidden": 8},
        "training": {"epochs": 2, "batch_size": 32},
        "forecast": {"total_paths": 6},
        "seeds": [0],
        "output_dir": str(tmp_path),
    }
    data.update(overrides)
    return ExperimentConfig.model_validate(data)


def write_run(root, name, method, seeds, rows):
    run_dir = root / name
    run_dir.mkdir(parents=True)
    (run_dir / "config.json").write_text(json.dumps({"name": name, "method": method, "seeds": seeds}))
    summary = pd.DataFrame(rows, columns=["subset", "metric", "mean"]).assign(se=0.0, n=len(seeds))
    summary.to_csv(run_dir / "summary.csv", index=False)
    return run_dir


# -----------------------------------------------------------------------
# configuration
# -----------------------------------------------------------------------


def test_default_config():
    config = create_default_config()
    assert config.method == "batch_ensemble"
    assert config.seeds == [0, 1, 2, 3, 4]
    train = config.build_train_config()
    assert (train.epochs, train.learning_rate, train.batch_size) == (500, 0.005, 64)
    assert config.build_forecast_config().total_paths == 2000
    assert config.build_model_config(10).ensemble_size == 10


def test_custom_config():
    config = create_custom_config(name="ts", task="timeseries", epochs=3, ensemble_size=4, gate_mask=["Z"])
    assert config.dataset.kind == "ar1"
    assert config.training == {"epochs": 3}
    assert config.build_model_config(1).gate_mask == ("Z",)
    with pytest.raises(ConfigError):
        create_custom_config(method="bagging")


@pytest.mark.parametrize(
    "overrides",
    [
        {"task": "timeseries"},
        {"seeds": [0, 0]},
        {"seeds": [-1]},
        {"seeds": []},
        {"dataset": {"kind": "ar1"}, "task": "timeseries", "shift": True},
        {"dataset": {"kind": "csv", "path": "absent.csv", "manifest": "absent.json"}},
    ],
)
def test_invalid_experiments(overrides):
    with pytest.raises(ValidationError):
        ExperimentConfig.model_validate(overrides)


def test_unknown_settings_are_config_errors():
    with pytest.raises(ConfigError):
        ExperimentConfig(training={"momentum": 0.9}).build_train_config()
    with pytest.raises(ConfigError):
        ExperimentConfig(network={"depth": 3}).build_model_config(4)


def test_config_files(tmp_path):
    config = tiny(tmp_path)
    path = config.write(tmp_path / "cfg" / "experiment.json")
    assert ExperimentConfig.from_file(path) == config
    with pytest.raises(ConfigError):
        ExperimentConfig.from_file(tmp_path / "absent.json")
    (tmp_path / "broken.json").write_text("{not json")
    with pytest.raises(ConfigError):
        ExperimentConfig.from_file(tmp_path / "broken.json")


def test_parameter_ratio_against_deep_ensemble():
    be = param_count(build(ModelConfig(task="regression", input_dim=10), Rng(0)))
    deep = param_count(build(ModelConfig(task="regression", input_dim=10, method="deep_ensemble"), Rng(0)))
    assert be / deep < 0.30


# -----------------------------------------------------------------------
# runs
# -----------------------------------------------------------------------


def test_regression_run_writes_artifacts(tmp_path):
    result = run_experiment(tiny(tmp_path))
    run_dir = tmp_path / "tiny"
    for name in ("config.json", "metrics_seed_0.json", "model_seed_0.npz", "summary.csv", "losses.csv"):
        assert (run_dir / name).is_file()
    for name in ("calibration.svg", "selective.svg"):
        assert "<svg" in (run_dir / name).read_text()
    metrics = json.loads((run_dir / "metrics_seed_0.json").read_text())
    assert "train_seconds" not in metrics
    scalars = metrics["subsets"]["all"]
    for key in ("rmse", "nll", "nll_no_const", "rmsce", "miscalibration_area", "total_uncertainty"):
        assert np.isfinite(scalars[key])
    assert len(scalars["coverage"]) == 39
    assert len(scalars["selective"]) == 10
    losses = pd.read_csv(run_dir / "losses.csv")
    assert list(losses.columns) == ["seed", "unit", "epoch", "loss", "penalty"]
    assert result.param_count == metrics["param_count"]


def test_classification_shift_run(tmp_path):
    config = tiny(tmp_path, name="cls", task="classification", shift=True, dataset={"kind": "ackley", "n": 400, "d": 3})
    result = run_experiment(config)
    run_dir = tmp_path / "cls"
    for name in ("reliability.csv", "reliability.svg", "calibration.svg", "shift_report.json"):
        assert (run_dir / name).is_file()
    subsets = result.reports[0].subsets
    assert set(subsets) == {"all", "id", "shift"}
    assert subsets["id"].count + subsets["shift"].count == subsets["all"].count
    for suite in subsets.values():
        assert 0.0 <= suite.ece <= 1.0
        assert suite.rmse is None
    shift = json.loads((run_dir / "shift_report.json").read_text())
    assert shift["n_test_shifted"] == subsets["shift"].count


def test_timeseries_run_writes_forecast(tmp_path):
    result = run_experiment(tiny(tmp_path, name="ts", task="timeseries"))
    forecast = pd.read_csv(tmp_path / "ts" / "forecast.csv")
    assert {"window", "step", "mean", "variance"} <= set(forecast.columns)
    assert forecast["step"].max() == 5
    suite = result.reports[0].subsets["all"]
    assert suite.total_uncertainty == pytest.approx(suite.aleatoric_uncertainty + suite.epistemic_uncertainty)


def test_runs_are_deterministic_across_workers(tmp_path):
    serial = run_experiment(tiny(tmp_path / "a", seeds=[0, 1], workers=1))
    threaded = run_experiment(tiny(tmp_path / "b", seeds=[0, 1], workers=2))
    assert [r.seed for r in threaded.reports] == [0, 1]
    for left, right in zip(serial.reports, threaded.reports):
        assert left.model_dump() == right.model_dump()


def test_checkpoint_evaluation_reproduces_run(tmp_path):
    config = tiny(tmp_path, method="mc_dropout")
    result = run_experiment(config)
    again = ExperimentManager(config).evaluate_checkpoint(tmp_path / "tiny" / "model_seed_0.npz")
    assert again.model_dump() == result.reports[0].model_dump()


def test_forecast_from_checkpoint(tmp_path):
    config = tiny(tmp_path, name="ts", task="timeseries")
    run_experiment(config)
    manager = ExperimentManager(config)
    future = manager.forecast_checkpoint(tmp_path / "ts" / "model_seed_0.npz", future=True)
    assert future.mean.shape == (1, 5)
    windows = manager.forecast_checkpoint(tmp_path / "ts" / "model_seed_0.npz")
    assert windows.mean.shape[0] > 1
    assert np.all(windows.variance >= 0)


# -----------------------------------------------------------------------
# ablations
# -----------------------------------------------------------------------


def test_adapter_suite_variants(tmp_path):
    variants = ablation_variants("adapters", tiny(tmp_path))
    labels = [label for label, _ in variants]
    assert labels == ["none", "R", "S", "B", "RS", "RB", "SB", "RSB"]
    assert all(cfg.method == "batch_ensemble" for _, cfg in variants)
    assert variants[0][1].network["adapter_mask"] == []


def test_gate_suite_needs_time_series(tmp_path):
    variants = ablation_variants("gates", tiny(tmp_path, task="timeseries"))
    assert [label for label, _ in variants] == ["C", "Z", "F", "CZ", "CF", "ZF", "CZF"]
    with pytest.raises(ConfigError):
        ablation_variants("gates", tiny(tmp_path))


def test_layer_suite(tmp_path):
    variants = ablation_variants("layers", tiny(tmp_path))
    assert len(variants) == 10
    assert variants[0][0] == "last 1"
    for k, (_, cfg) in enumerate(variants, start=1):
        model_config = cfg.build_model_config(3)
        assert model_config.hidden_dims == [8] * 9
        assert model_config.be_layer_count == k
    with pytest.raises(ConfigError):
        ablation_variants("layers", tiny(tmp_path, task="timeseries"))


def test_init_suite(tmp_path):
    variants = ablation_variants("init", tiny(tmp_path))
    assert [label for label, _ in variants] == [
        "BE",
        "BE(lambda=0.0001)",
        "BE(lambda=0.001)",
        "BE(lambda=0.01)",
        "BE(O)",
        "BE(O,lambda=0.0001)",
        "BE(O,lambda=0.001)",
        "BE(O,lambda=0.01)",
    ]
    with pytest.raises(ConfigError):
        ablation_variants("dropout", tiny(tmp_path))


def test_run_adapter_ablation(tmp_path):
    base = tiny(tmp_path, name="abl", training={"epochs": 1, "batch_size": 64}, dataset={"kind": "ackley", "n": 100, "d": 3})
    table = run_ablation("adapters", base)
    assert len(table) == 8
    counts = dict(zip(table["variant"], table["param_count"]))
    assert counts["none"] < counts["R"] < counts["RSB"]
    assert {"rmse", "rmse_se", "nll"} <= set(table.columns)
    out_dir = tmp_path / "abl" / "ablation_adapters"
    assert (out_dir / "ablation.csv").is_file()
    assert (out_dir / "ablation.md").read_text().startswith("# Ablation: adapters")


# -----------------------------------------------------------------------
# combined report
# -----------------------------------------------------------------------


def test_report_delta_missing_and_seed_warning(tmp_path):
    shifted = write_run(
        tmp_path,
        "be_shift",
        "batch_ensemble",
        [0, 1, 2],
        [("all", "rmse", 0.3), ("id", "rmse", 0.2), ("shift", "rmse", 0.5)],
    )
    plain = write_run(tmp_path, "single", "single", [0, 1], [("all", "rmse", 0.4)])
    combined = report([shifted, plain, tmp_path / "absent"], tmp_path / "out")

    row = combined.table[combined.table["run"] == "be_shift"].iloc[0]
    assert row["delta"] == pytest.approx(0.3)
    assert np.isnan(combined.table[combined.table["run"] == "single"].iloc[0]["delta"])
    assert combined.missing == [str(tmp_path / "absent")]
    assert len(combined.warnings) == 1
    markdown = (tmp_path / "out" / "combined.md").read_text()
    assert "> Warning:" in markdown and "> Missing run:" in markdown
    assert (tmp_path / "out" / "combined.csv").is_file()


# -----------------------------------------------------------------------
# command line
# -----------------------------------------------------------------------


def test_cli_synth_train_and_shift_split(tmp_path):
    csv = tmp_path / "ackley.csv"
    assert cli.main(["synth", "ackley", "--n", "120", "--d", "3", "--output", str(csv)]) == 0
    manifest = tmp_path / "ackley.manifest.json"
    assert manifest.is_file()

    code = cli.main(
        [
            "-q",
            "train",
            "--data", str(csv),
            "--manifest", str(manifest),
            "--name", "cli_run",
            "--seeds", "0",
            "--epochs", "1",
            "--ensemble-size", "2",
            "--hidden", "4",
            "--output-dir", str(tmp_path / "runs"),
        ]
    )
    assert code == 0
    assert (tmp_path / "runs" / "cli_run" / "metrics_seed_0.json").is_file()

    out = tmp_path / "shift.json"
    code = cli.main(["shift-split", "--data", str(csv), "--manifest", str(manifest), "--output", str(out)])
    assert code == 0
    assert json.loads(out.read_text())["d_selected"] == 2


def test_cli_series_synth(tmp_path):
    out = tmp_path / "walk.csv"
    assert cli.main(["synth", "random_walk", "--n", "50", "--output", str(out)]) == 0
    assert list(pd.read_csv(out).columns) == ["t", "value"]


def test_cli_exit_codes(tmp_path, monkeypatch):
    assert cli.main(["train", "--config", str(tmp_path / "absent.json")]) == cli.EXIT_CONFIG
    assert cli.main(["train", "--task", "timeseries"]) == cli.EXIT_CONFIG
    assert cli.main(["evaluate", "--checkpoint", str(tmp_path / "absent.npz")]) == cli.EXIT_DATA

    def diverge(config):
        raise NumericalError("non-finite loss")

    monkeypatch.setattr(cli, "run_experiment", diverge)
    assert cli.main(["train"]) == cli.EXIT_NUMERICAL


# -----------------------------------------------------------------------
# desk-scale behaviour
# -----------------------------------------------------------------------


def desk_config(tmp_path, method, epochs=100):
    return ExperimentConfig.model_validate(
        {
            "name": method,
            "dataset": {"kind": "ackley", "n": 2000, "d": 10},
            "method": method,
            "training": {"epochs": epochs},
            "output_dir": str(tmp_path),
        }
    )


def mean_nll(result):
    return float(np.mean([r.subsets["all"].nll for r in result.reports]))


def selective_rank_correlation(result):
    curve = np.mean([r.subsets["all"].selective for r in result.reports], axis=0)
    return spearmanr(curve, np.arange(curve.size)).statistic


@pytest.mark.slow
def test_batch_ensemble_against_single_and_deep_ensemble(tmp_path):
    be = run_experiment(desk_config(tmp_path, "batch_ensemble"))
    single = run_experiment(desk_config(tmp_path, "single"))
    deep = run_experiment(desk_config(tmp_path, "deep_ensemble"))

    wins = sum(
        b.subsets["all"].nll <= s.subsets["all"].nll for b, s in zip(be.reports, single.reports)
    )
    assert wins >= 4
    assert abs(mean_nll(be) - mean_nll(deep)) <= 0.15 * abs(mean_nll(deep))
    assert selective_rank_correlation(be) >= 0.9
    assert selective_rank_correlation(deep) >= 0.9


@pytest.mark.slow
def test_batch_ensemble_trains_faster_than_deep_ensemble(tmp_path):
    timings = {}
    for method in ("batch_ensemble", "deep_ensemble"):
        manager = ExperimentManager(desk_config(tmp_path, method, epochs=20))
        dataset, _ = manager.load_data()
        outcome = manager.run_seed(dataset, 0)
        timings[method] = outcome.report.train_seconds
    assert timings["batch_ensemble"] < 0.35 * timings["deep_ensemble"]
