"""
Evaluation metrics: scoring rules, interval and confidence calibration,
uncertainty decomposition and selective-prediction curves.

All logarithms are natural. The evaluation Gaussian NLL includes the
0.5*log(2*pi) constant; `nll_no_const` in reports matches the training loss.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field
from scipy.special import entr
from scipy.stats import norm

from errors import ContractError, DataError, ParameterError, ShapeError
from losses import aggregate_categorical, aggregate_gaussian

logger = logging.getLogger(__name__)

PROBABILITY_FLOOR = 1e-12
SELECTIVE_LEVELS: Tuple[float, ...] = tuple(np.round(np.linspace(0.1, 1.0, 10), 10))


def _labels(probs: np.ndarray, labels) -> np.ndarray:
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    if probs.ndim != 2 or labels.shape != (probs.shape[0],):
        raise ShapeError(f"probabilities {probs.shape} and labels {labels.shape} disagree")
    labels = labels.astype(np.int64)
    if np.any((labels < 0) | (labels >= probs.shape[1])):
        raise DataError(f"labels must lie in 0..{probs.shape[1] - 1}")
    return labels


# ----------------------------------------------------------------------
# Point and scoring metrics
# ----------------------------------------------------------------------


def rmse(pred, y) -> float:
    pred, y = np.asarray(pred, dtype=np.float64), np.asarray(y, dtype=np.float64)
    return float(np.sqrt(np.mean(np.square(pred - y))))


def accuracy(probs, labels) -> float:
    labels = _labels(probs, labels)
    return float(np.mean(np.argmax(probs, axis=1) == labels))


def gaussian_nll_eval(mean, var, y, include_const: bool = True) -> float:
    """Mean Gaussian negative log density of y under N(mean, var)"""
    mean, var, y = (np.asarray(a, dtype=np.float64) for a in (mean, var, y))
    if np.any(var <= 0):
        raise ContractError("predictive variances must be positive")
    nll = 0.5 * np.log(var) + np.square(y - mean) / (2.0 * var)
    if include_const:
        nll = nll + 0.5 * np.log(2.0 * np.pi)
    return float(np.mean(nll))


def categorical_nll_eval(probs, labels) -> float:
    labels = _labels(probs, labels)
    picked = np.asarray(probs)[np.arange(labels.shape[0]), labels]
    return float(-np.mean(np.log(np.clip(picked, PROBABILITY_FLOOR, 1.0))))


def brier(probs, labels) -> float:
    """Squared distance to the one-hot label, summed over classes, averaged over samples"""
    labels = _labels(probs, labels)
    probs = np.asarray(probs, dtype=np.float64)
    onehot = np.eye(probs.shape[1])[labels]
    return float(np.mean(np.sum(np.square(probs - onehot), axis=1)))


# ----------------------------------------------------------------------
# Confidence calibration
# ----------------------------------------------------------------------


def reliability_table(probs, labels, n_bins: int = 15) -> pd.DataFrame:
    """
    Confidence-binned accuracy.

    Args:
        probs: (n, C) predicted probabilities
        labels: (n,) true classes
        n_bins: uniform bins on [0, 1]

    Returns:
        DataFrame with one row per bin: lower, upper, count, confidence, accuracy.
        Empty bins report count 0 and NaN averages.
    """
    if n_bins < 1:
        raise ParameterError(f"n_bins must be >= 1, got {n_bins}")
    labels = _labels(probs, labels)
    probs = np.asarray(probs, dtype=np.float64)
    confidence = probs.max(axis=1)
    correct = (probs.argmax(axis=1) == labels).astype(np.float64)
    bins = np.minimum((confidence * n_bins).astype(np.int64), n_bins - 1)

    counts = np.bincount(bins, minlength=n_bins)
    conf_sum = np.bincount(bins, weights=confidence, minlength=n_bins)
    acc_sum = np.bincount(bins, weights=correct, minlength=n_bins)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean_conf = np.where(counts > 0, conf_sum / np.maximum(counts, 1), np.nan)
        mean_acc = np.where(counts > 0, acc_sum / np.maximum(counts, 1), np.nan)
    edges = np.linspace(0.0, 1.0, n_bins + 1)
    return pd.DataFrame(
        {
            "bin": np.arange(n_bins),
            "lower": edges[:-1],
            "upper": edges[1:],
            "count": counts,
            "confidence": mean_conf,
            "accuracy": mean_acc,
        }
    )


def ece(probs, labels, n_bins: int = 15) -> float:
    """sum_m |B_m|/N * |acc(B_m) - conf(B_m)|; empty bins contribute 0"""
    table = reliability_table(probs, labels, n_bins)
    filled = table[table["count"] > 0]
    n = table["count"].sum()
    if n == 0:
        raise ContractError("ECE needs at least one sample")
    gaps = np.abs(filled["accuracy"] - filled["confidence"]) * filled["count"] / n
    return float(gaps.sum())


# ----------------------------------------------------------------------
# Interval calibration
# ----------------------------------------------------------------------


@dataclass
class CoverageGrid:
    """Nominal central-interval coverages"""

    levels: np.ndarray = field(default_factory=lambda: np.linspace(0.025, 0.975, 39))

    def __post_init__(self):
        self.levels = np.asarray(self.levels, dtype=np.float64)
        if self.levels.ndim != 1 or self.levels.size == 0:
            raise ParameterError("coverage grid must be a non-empty 1-D array")
        if np.any(self.levels <= 0) or np.any(self.levels >= 1):
            raise ParameterError("coverage levels must lie in (0, 1)")
        if np.any(np.diff(self.levels) <= 0):
            raise ParameterError("coverage levels must be strictly increasing")

    @classmethod
    def evenly_spaced(cls, count: int = 39, low: float = 0.025, high: float = 0.975) -> "CoverageGrid":
        return cls(np.linspace(low, high, count))


def coverage_curve(mean, var, y, grid: CoverageGrid) -> np.ndarray:
    """Fraction of y inside mean +- z_{(1+g)/2} * sigma for every level g"""
    mean, var, y = (np.asarray(a, dtype=np.float64).reshape(-1) for a in (mean, var, y))
    if np.any(var <= 0):
        raise ContractError("predictive variances must be positive")
    z = norm.ppf((1.0 + grid.levels) / 2.0)
    residual = np.abs(y - mean)[:, None]
    inside = residual <= z[None, :] * np.sqrt(var)[:, None]
    return inside.mean(axis=0)


def rmsce_and_area(empirical, grid: CoverageGrid) -> Tuple[float, float]:
    """
    Root-mean-square calibration error and miscalibration area.

    The area is the trapezoidal integral of |empirical - nominal| over the
    grid span; a single-level grid has area 0.
    """
    empirical = np.asarray(empirical, dtype=np.float64)
    if empirical.shape != grid.levels.shape:
        raise ShapeError(f"{empirical.shape} coverages for a grid of {grid.levels.shape}")
    gap = np.abs(empirical - grid.levels)
    rmsce = float(np.sqrt(np.mean(np.square(gap))))
    if grid.levels.size < 2:
        return rmsce, 0.0
    return rmsce, float(np.trapezoid(gap, grid.levels))


# ----------------------------------------------------------------------
# Uncertainty decomposition
# ----------------------------------------------------------------------


def decompose_regression(member_means, member_vars) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Split the mixture variance into its two terms.

    Args:
        member_means: (K, n) member means
        member_vars: (K, n) member variances

    Returns:
        (total, aleatoric, epistemic) per sample; aleatoric is the mean member
        variance and epistemic the variance of member means
    """
    member_means = np.asarray(member_means, dtype=np.float64)
    member_vars = np.asarray(member_vars, dtype=np.float64)
    aleatoric = member_vars.mean(axis=0)
    epistemic = np.square(member_means - member_means.mean(axis=0)).mean(axis=0)
    return aleatoric + epistemic, aleatoric, epistemic


def decompose_classification(member_probs) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Predictive entropy split into mean member entropy and mutual information.

    Args:
        member_probs: (K, n, C) member probability rows

    Returns:
        (total, aleatoric, epistemic) per sample in nats
    """
    member_probs = np.asarray(member_probs, dtype=np.float64)
    total = entr(member_probs.mean(axis=0)).sum(axis=-1)
    aleatoric = entr(member_probs).sum(axis=-1).mean(axis=0)
    # Jensen: rounding can push the difference a few ulps below zero
    epistemic = np.maximum(total - aleatoric, 0.0)
    return aleatoric + epistemic, aleatoric, epistemic


# ----------------------------------------------------------------------
# Selective prediction
# ----------------------------------------------------------------------


def selection_size(level: float, n: int) -> int:
    """ceil(level * n), rounded first so 0.3 * 10 selects 3 samples"""
    return max(1, int(math.ceil(round(level * n, 9))))


def selective_curve(
    uncertainty,
    metric: Callable[[np.ndarray], float],
    levels: Sequence[float] = SELECTIVE_LEVELS,
) -> pd.DataFrame:
    """
    Metric on the most certain fraction of samples for each coverage level.

    Args:
        uncertainty: (n,) score per sample, lower is more certain
        metric: function of the selected sample indices
        levels: coverage fractions in (0, 1]

    Returns:
        DataFrame with columns coverage, selected, metric
    """
    uncertainty = np.asarray(uncertainty, dtype=np.float64).reshape(-1)
    n = uncertainty.size
    if n == 0:
        raise ContractError("selective curve needs at least one sample")
    order = np.argsort(uncertainty, kind="stable")
    rows = []
    for level in levels:
        if not 0.0 < level <= 1.0:
            raise ParameterError(f"coverage level must lie in (0, 1], got {level}")
        count = selection_size(level, n)
        rows.append({"coverage": float(level), "selected": count, "metric": float(metric(order[:count]))})
    return pd.DataFrame(rows, columns=["coverage", "selected", "metric"])


# ----------------------------------------------------------------------
# Report suites
# ----------------------------------------------------------------------


class SubsetMetrics(BaseModel):
    """Metric suite on one evaluation subset (all, id or shift)"""

    count: int
    rmse: Optional[float] = None
    nll: Optional[float] = None
    nll_no_const: Optional[float] = None
    accuracy: Optional[float] = None
    brier: Optional[float] = None
    ece: Optional[float] = None
    rmsce: Optional[float] = None
    miscalibration_area: Optional[float] = None
    total_uncertainty: Optional[float] = None
    aleatoric_uncertainty: Optional[float] = None
    epistemic_uncertainty: Optional[float] = None
    coverage: List[float] = Field(default_factory=list)
    selective: List[float] = Field(default_factory=list)

    def scalars(self) -> Dict[str, float]:
        """Scalar metrics that are set"""
        data = self.model_dump(exclude={"coverage", "selective"})
        return {k: float(v) for k, v in data.items() if v is not None}


class MetricsReport(BaseModel):
    """Everything measured for one trained model"""

    dataset: str
    task: str
    method: str
    seed: int
    param_count: int
    coverage_levels: List[float] = Field(default_factory=list)
    selective_levels: List[float] = Field(default_factory=list)
    subsets: Dict[str, SubsetMetrics] = Field(default_factory=dict)

    # Wall-clock time varies between runs; kept out of the JSON file
    train_seconds: float = Field(default=0.0, exclude=True)


def regression_metrics(
    member_means,
    member_vars,
    y,
    grid: CoverageGrid,
    levels: Sequence[float] = SELECTIVE_LEVELS,
) -> SubsetMetrics:
    """Full regression suite from (K, n) member moments"""
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    mean, var = aggregate_gaussian(member_means, member_vars)
    total, aleatoric, epistemic = decompose_regression(member_means, member_vars)
    empirical = coverage_curve(mean, var, y, grid)
    rmsce, area = rmsce_and_area(empirical, grid)
    curve = selective_curve(np.sqrt(var), lambda idx: rmse(mean[idx], y[idx]), levels)
    return SubsetMetrics(
        count=int(y.size),
        rmse=rmse(mean, y),
        nll=gaussian_nll_eval(mean, var, y),
        nll_no_const=gaussian_nll_eval(mean, var, y, include_const=False),
        rmsce=rmsce,
        miscalibration_area=area,
        total_uncertainty=float(total.mean()),
        aleatoric_uncertainty=float(aleatoric.mean()),
        epistemic_uncertainty=float(epistemic.mean()),
        coverage=empirical.tolist(),
        selective=curve["metric"].tolist(),
    )


def classification_metrics(
    member_probs,
    labels,
    n_bins: int = 15,
    levels: Sequence[float] = SELECTIVE_LEVELS,
) -> SubsetMetrics:
    """Full classification suite from (K, n, C) member probabilities"""
    labels = np.asarray(labels).astype(np.int64)
    probs = aggregate_categorical(member_probs)
    total, aleatoric, epistemic = decompose_classification(member_probs)
    hits = (probs.argmax(axis=1) == labels).astype(np.float64)
    curve = selective_curve(total, lambda idx: hits[idx].mean(), levels)
    return SubsetMetrics(
        count=int(labels.size),
        accuracy=accuracy(probs, labels),
        nll=categorical_nll_eval(probs, labels),
        brier=brier(probs, labels),
        ece=ece(probs, labels, n_bins),
        total_uncertainty=float(total.mean()),
        aleatoric_uncertainty=float(aleatoric.mean()),
        epistemic_uncertainty=float(epistemic.mean()),
        selective=curve["metric"].tolist(),
    )


def forecast_metrics(
    mean,
    variance,
    within,
    between,
    targets,
    grid: CoverageGrid,
    levels: Sequence[float] = SELECTIVE_LEVELS,
) -> SubsetMetrics:
    """
    Forecast suite over (n, H) pooled moments.

    The selective score of a window is its predictive standard deviation
    averaged over the horizon.
    """
    mean, variance, targets = (np.asarray(a, dtype=np.float64) for a in (mean, variance, targets))
    safe_var = np.maximum(variance, PROBABILITY_FLOOR)
    empirical = coverage_curve(mean, safe_var, targets, grid)
    rmsce, area = rmsce_and_area(empirical, grid)
    score = np.sqrt(variance).mean(axis=1)
    curve = selective_curve(score, lambda idx: rmse(mean[idx], targets[idx]), levels)
    return SubsetMetrics(
        count=int(targets.shape[0]),
        rmse=rmse(mean, targets),
        nll=gaussian_nll_eval(mean, safe_var, targets),
        nll_no_const=gaussian_nll_eval(mean, safe_var, targets, include_const=False),
        rmsce=rmsce,
        miscalibration_area=area,
        total_uncertainty=float(np.mean(variance)),
        aleatoric_uncertainty=float(np.mean(within)),
        epistemic_uncertainty=float(np.mean(between)),
        coverage=empirical.tolist(),
        selective=curve["metric"].tolist(),
    )


def summarize_reports(reports: Sequence[MetricsReport]) -> pd.DataFrame:
    """
    Mean and standard error (sample SD / sqrt(n)) of every scalar metric
    across seeds, per subset.
    """
    rows = []
    for report in reports:
        for subset, metrics in report.subsets.items():
            for name, value in metrics.scalars().items():
                rows.append({"subset": subset, "metric": name, "seed": report.seed, "value": value})
        rows.append({"subset": "all", "metric": "param_count", "seed": report.seed, "value": float(report.param_count)})
        rows.append({"subset": "all", "metric": "train_seconds", "seed": report.seed, "value": report.train_seconds})
    frame = pd.DataFrame(rows, columns=["subset", "metric", "seed", "value"])
    grouped = frame.groupby(["subset", "metric"], sort=True)["value"]
    summary = grouped.agg(mean="mean", sd=lambda v: v.std(ddof=1) if len(v) > 1 else 0.0, n="count")
    summary["se"] = summary["sd"] / np.sqrt(summary["n"])
    return summary.drop(columns="sd").reset_index()[["subset", "metric", "mean", "se", "n"]]
