"""Test scoring rules, calibration, uncertainty decomposition and selective curves."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from errors import ContractError, DataError, ParameterError, ShapeError
from losses import aggregate_gaussian
from metrics import (
    CoverageGrid,
    MetricsReport,
    SubsetMetrics,
    brier,
    classification_metrics,
    coverage_curve,
    decompose_classification,
    decompose_regression,
    ece,
    forecast_metrics,
    gaussian_nll_eval,
    regression_metrics,
    reliability_table,
    rmse,
    rmsce_and_area,
    selection_size,
    selective_curve,
    summarize_reports,
)
from numcore import Rng


# -----------------------------------------------------------------------
# scoring rules
# -----------------------------------------------------------------------


def test_brier_examples():
    assert brier([[1.0, 0.0], [0.0, 1.0]], [0, 1]) == 0.0
    assert brier([[0.5, 0.5], [0.5, 0.5]], [0, 1]) == pytest.approx(0.5)
    assert brier([[0.8, 0.2]], [1]) == pytest.approx(1.28)
    assert brier([[0.8, 0.2]], [0]) == pytest.approx(0.08)


def test_brier_rejects_bad_labels():
    with pytest.raises(DataError):
        brier([[0.5, 0.5]], [2])
    with pytest.raises(ShapeError):
        brier([[0.5, 0.5]], [0, 1])


def test_evaluation_nll_matches_entropy_of_own_distribution():
    rng = Rng(31)
    var = 0.7
    y = rng.normal(0.0, np.sqrt(var), 50_000)
    entropy = 0.5 * np.log(2 * np.pi * np.e * var)
    assert gaussian_nll_eval(np.zeros_like(y), np.full_like(y, var), y) == pytest.approx(entropy, rel=0.02)


def test_evaluation_nll_constant():
    with_const = gaussian_nll_eval([0.0], [1.0], [1.0])
    without = gaussian_nll_eval([0.0], [1.0], [1.0], include_const=False)
    assert without == pytest.approx(0.5)
    assert with_const - without == pytest.approx(0.5 * np.log(2 * np.pi))


# -----------------------------------------------------------------------
# ECE and reliability
# -----------------------------------------------------------------------


def test_ece_examples():
    assert ece([[1.0, 0.0], [0.0, 1.0]], [0, 1]) == 0.0
    assert ece([[0.8, 0.2]], [0]) == pytest.approx(0.2)
    assert ece([[0.8, 0.2], [0.8, 0.2]], [0, 1]) == pytest.approx(0.3)


def test_reliability_table_bins():
    table = reliability_table([[0.8, 0.2], [0.55, 0.45], [0.05, 0.95]], [0, 1, 1], n_bins=15)
    assert len(table) == 15
    assert table["count"].sum() == 3
    assert table.loc[14, "count"] == 1  # confidence 0.95
    assert np.isnan(table.loc[0, "accuracy"])
    with pytest.raises(ParameterError):
        reliability_table([[0.5, 0.5]], [0], n_bins=0)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 40), st.integers(2, 5), st.integers(0, 2**32 - 1))
def test_ece_and_brier_ranges(n, C, seed):
    rng = Rng(seed)
    probs = rng.uniform(0.01, 1.0, (n, C))
    probs /= probs.sum(axis=1, keepdims=True)
    labels = rng.integers(0, C, n)
    assert 0.0 <= ece(probs, labels) <= 1.0
    assert 0.0 <= brier(probs, labels) <= 2.0


# -----------------------------------------------------------------------
# interval calibration
# -----------------------------------------------------------------------


def test_default_grid():
    grid = CoverageGrid()
    assert grid.levels.size == 39
    assert grid.levels[0] == pytest.approx(0.025)
    assert grid.levels[-1] == pytest.approx(0.975)
    assert np.allclose(np.diff(grid.levels), 0.025)
    with pytest.raises(ParameterError):
        CoverageGrid([0.5, 0.4])
    with pytest.raises(ParameterError):
        CoverageGrid([0.0, 0.5])


def test_coverage_curve_examples():
    grid = CoverageGrid()
    y = np.array([0.1, -0.4, 2.0])
    assert np.array_equal(coverage_curve(y, np.ones(3), y, grid), np.ones(39))
    assert np.array_equal(coverage_curve(y, np.full(3, 1e-20), y + 1.0, grid), np.zeros(39))
    with pytest.raises(ContractError):
        coverage_curve(y, np.zeros(3), y, grid)


def test_coverage_of_self_consistent_draws():
    grid = CoverageGrid()
    rng = Rng(32)
    mean = rng.uniform(-1, 1, 20_000)
    var = rng.uniform(0.1, 2.0, 20_000)
    y = mean + np.sqrt(var) * rng.standard_normal(20_000)
    curve = coverage_curve(mean, var, y, grid)
    assert np.all(np.abs(curve - grid.levels) < 0.02)
    rmsce, area = rmsce_and_area(curve, grid)
    assert rmsce < 0.03 and area < 0.03


def test_ece_of_calibrated_classifier():
    rng = Rng(35)
    p1 = rng.uniform(0.0, 1.0, 20_000)
    labels = (rng.uniform(0.0, 1.0, 20_000) < p1).astype(np.int64)
    probs = np.column_stack([1.0 - p1, p1])
    assert ece(probs, labels) < 0.02


def test_rmsce_and_area_examples():
    grid = CoverageGrid()
    assert rmsce_and_area(grid.levels, grid) == (0.0, 0.0)
    rmsce, area = rmsce_and_area(grid.levels + 0.1, grid)
    assert rmsce == pytest.approx(0.1)
    assert area == pytest.approx(0.095)
    single = CoverageGrid([0.5])
    assert rmsce_and_area(np.array([0.7]), single) == (pytest.approx(0.2), 0.0)
    with pytest.raises(ShapeError):
        rmsce_and_area(np.zeros(3), grid)


# -----------------------------------------------------------------------
# decomposition
# -----------------------------------------------------------------------


def test_regression_decomposition_examples():
    total, aleatoric, epistemic = decompose_regression([[0.0], [2.0]], [[1.0], [1.0]])
    assert (total[0], aleatoric[0], epistemic[0]) == (2.0, 1.0, 1.0)
    _, _, epistemic = decompose_regression(np.full((3, 4), 0.5), np.ones((3, 4)))
    assert np.array_equal(epistemic, np.zeros(4))


def test_decomposition_reproduces_reported_row():
    # member variances 0.012 each, member means spread with variance 0.001
    spread = np.sqrt(0.001)
    means = np.array([[0.4 - spread], [0.4 + spread]])
    variances = np.full((2, 1), 0.012)
    total, aleatoric, epistemic = decompose_regression(means, variances)
    assert aleatoric[0] == pytest.approx(0.012, abs=1e-15)
    assert epistemic[0] == pytest.approx(0.001, abs=1e-15)
    assert total[0] == pytest.approx(0.013, abs=1e-15)
    assert total[0] - (aleatoric[0] + epistemic[0]) == pytest.approx(0.0, abs=1e-12)
    assert (round(total[0], 3), round(aleatoric[0], 3), round(epistemic[0], 3)) == (0.013, 0.012, 0.001)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_regression_decomposition_is_additive(K, seed):
    rng = Rng(seed)
    means = rng.normal(size=(K, 8))
    variances = rng.uniform(0.01, 3.0, (K, 8))
    total, aleatoric, epistemic = decompose_regression(means, variances)
    _, mixture = aggregate_gaussian(means, variances)
    assert np.allclose(total, aleatoric + epistemic, atol=1e-12)
    assert np.allclose(total, mixture, atol=1e-12)
    assert np.all(epistemic >= 0)


def test_classification_decomposition_examples():
    total, aleatoric, epistemic = decompose_classification([[[1.0, 0.0]], [[0.0, 1.0]]])
    assert total[0] == pytest.approx(np.log(2))
    assert aleatoric[0] == 0.0
    assert epistemic[0] == pytest.approx(np.log(2))
    total, aleatoric, epistemic = decompose_classification(np.full((4, 2, 3), 1 / 3))
    assert np.allclose(aleatoric, np.log(3))
    assert np.allclose(epistemic, 0.0)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.integers(2, 5), st.integers(0, 2**32 - 1))
def test_classification_decomposition_is_additive(K, C, seed):
    rng = Rng(seed)
    probs = rng.uniform(0.0, 1.0, (K, 6, C))
    probs /= probs.sum(axis=-1, keepdims=True)
    total, aleatoric, epistemic = decompose_classification(probs)
    assert np.allclose(total, aleatoric + epistemic, atol=1e-12)
    assert np.all(epistemic >= 0)


# -----------------------------------------------------------------------
# selective prediction
# -----------------------------------------------------------------------


def test_selection_size_rounds_up():
    assert selection_size(0.3, 10) == 3
    assert selection_size(0.25, 10) == 3
    assert selection_size(0.01, 10) == 1
    assert selection_size(1.0, 7) == 7


def test_selective_rmse_on_most_certain_half():
    errors = np.array([0.0, 1.0, 2.0, 3.0])
    pred, y = errors, np.zeros(4)
    curve = selective_curve(np.arange(4.0), lambda idx: rmse(pred[idx], y[idx]), [0.5, 1.0])
    assert curve["metric"].iloc[0] == pytest.approx(np.sqrt(0.5))
    assert curve["metric"].iloc[1] == pytest.approx(rmse(pred, y))


def test_selective_ties_keep_index_order():
    values = np.array([5.0, 1.0, 3.0, 2.0])
    curve = selective_curve(np.zeros(4), lambda idx: values[idx].mean(), [0.25, 0.5])
    assert curve["metric"].tolist() == [5.0, 3.0]


def test_selective_rejects_bad_input():
    with pytest.raises(ContractError):
        selective_curve([], lambda idx: 0.0)
    with pytest.raises(ParameterError):
        selective_curve([1.0], lambda idx: 0.0, [0.0])


# -----------------------------------------------------------------------
# suites and summaries
# -----------------------------------------------------------------------


def test_regression_suite_full_coverage_matches_global_rmse():
    rng = Rng(33)
    means = rng.normal(size=(3, 50))
    variances = rng.uniform(0.1, 1.0, (3, 50))
    y = rng.normal(size=50)
    suite = regression_metrics(means, variances, y, CoverageGrid())
    assert suite.selective[-1] == pytest.approx(suite.rmse)
    assert suite.total_uncertainty == pytest.approx(suite.aleatoric_uncertainty + suite.epistemic_uncertainty)
    assert len(suite.coverage) == 39
    assert suite.nll - suite.nll_no_const == pytest.approx(0.5 * np.log(2 * np.pi))


def test_classification_suite():
    probs = np.array([[[0.9, 0.1], [0.2, 0.8], [0.6, 0.4]]] * 2)
    suite = classification_metrics(probs, [0, 1, 1])
    assert suite.accuracy == pytest.approx(2 / 3)
    assert suite.selective[-1] == pytest.approx(2 / 3)
    assert suite.epistemic_uncertainty == pytest.approx(0.0, abs=1e-12)
    assert suite.rmse is None and suite.coverage == []


def test_forecast_suite_variance_split():
    rng = Rng(34)
    within = rng.uniform(0.1, 0.5, (6, 5))
    between = rng.uniform(0.0, 0.2, (6, 5))
    mean = rng.normal(size=(6, 5))
    targets = mean + rng.normal(size=(6, 5))
    suite = forecast_metrics(mean, within + between, within, between, targets, CoverageGrid())
    assert suite.total_uncertainty == pytest.approx(suite.aleatoric_uncertainty + suite.epistemic_uncertainty)
    assert suite.selective[-1] == pytest.approx(suite.rmse)


def test_summary_mean_and_standard_error():
    reports = [
        MetricsReport(
            dataset="toy",
            task="regression",
            method="single",
            seed=seed,
            param_count=10,
            subsets={"all": SubsetMetrics(count=5, rmse=value)},
            train_seconds=1.0,
        )
        for seed, value in enumerate([1.0, 2.0, 3.0])
    ]
    summary = summarize_reports(reports)
    row = summary[(summary["subset"] == "all") & (summary["metric"] == "rmse")].iloc[0]
    assert row["mean"] == pytest.approx(2.0)
    assert row["se"] == pytest.approx(1.0 / np.sqrt(3))
    assert row["n"] == 3
    assert "train_seconds" not in reports[0].model_dump()
