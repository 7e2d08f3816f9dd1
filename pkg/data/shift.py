"""
Tail-quantile distribution-shift splits.

A base split is drawn first and a GLM fitted on its training portion picks the
most influential numeric features. Training rows with a value outside those
features' [q, 1-q] quantiles (computed on the base training portion) move to
the test set, so training data is purely in-distribution while the test set
mixes in-distribution and tail samples. The base test fraction is sized so the
final test set is about 20% of the data.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field

from data.tabular import RawTable, TabularDataset, split_table
from errors import ConfigError
from numcore import Rng, Tensor, backward, getitem, log, softmax
from trainer import AdamState, TrainConfig, adam_step

logger = logging.getLogger(__name__)

TARGET_TEST_FRACTION = 0.2


@dataclass
class ShiftSpec:
    """Tail definition and the split sizes it implies"""

    q: float = 0.025
    d_selected: int = 2
    selected: List[int] = field(default_factory=list)
    lower: List[float] = field(default_factory=list)
    upper: List[float] = field(default_factory=list)

    def __post_init__(self):
        if not 0.0 <= self.q < 0.5:
            raise ConfigError(f"Tail quantile must lie in [0, 0.5), got {self.q}")
        if self.d_selected < 1:
            raise ConfigError("At least one feature must be selected")
        if self.p_tail >= TARGET_TEST_FRACTION:
            raise ConfigError(f"Tail probability {self.p_tail:.4f} leaves no room for a base test split")

    @property
    def p_tail(self) -> float:
        """Probability a sample has a tail value in any selected feature (independence)"""
        return 1.0 - (1.0 - 2.0 * self.q) ** self.d_selected

    @property
    def base_split(self) -> float:
        """Base test fraction so the expected final test fraction is 20%"""
        return (TARGET_TEST_FRACTION - self.p_tail) / (1.0 - self.p_tail)


class ShiftReport(BaseModel):
    """What a shift split selected and how many rows moved"""

    dataset: str
    q: float
    d_selected: int
    p_tail: float
    base_split: float
    selected_features: List[str]
    coefficients: Dict[str, float]
    lower_bounds: Dict[str, float]
    upper_bounds: Dict[str, float]
    n_train: int
    n_test: int
    n_test_shifted: int
    test_fraction: float = Field(ge=0.0, le=1.0)

    def write(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.model_dump_json(indent=2), encoding="utf-8")
        return path


def _standardize(x: np.ndarray) -> np.ndarray:
    std = x.std(axis=0)
    return (x - x.mean(axis=0)) / np.where(std > 0, std, 1.0)


def fit_glm(
    x: np.ndarray,
    y: np.ndarray,
    task: str,
    rng: Rng,
    epochs: int = 200,
    learning_rate: float = 0.05,
) -> np.ndarray:
    """
    Coefficients of a GLM on standardized features.

    Regression uses ordinary least squares. Classification fits a softmax
    (logistic) regression by full-batch Adam on the Tensor engine; a feature's
    coefficient is its largest absolute weight over classes.

    Returns:
        (d,) coefficient magnitudes
    """
    z = _standardize(np.asarray(x, dtype=np.float64))
    n, d = z.shape
    design = np.hstack([z, np.ones((n, 1))])
    if task != "classification":
        beta, *_ = np.linalg.lstsq(design, np.asarray(y, dtype=np.float64), rcond=None)
        return np.abs(beta[:d])

    labels = np.asarray(y).astype(np.int64)
    classes = int(labels.max()) + 1
    weight = Tensor(rng.normal(0.0, 0.01, (d + 1, classes)), requires_grad=True)
    params = {"weight": weight}
    cfg = TrainConfig(epochs=epochs, learning_rate=learning_rate)
    state = AdamState()
    rows = np.arange(n)
    for _ in range(epochs):
        weight.zero_grad()
        probs = softmax(Tensor(design) @ weight, axis=1)
        loss = -log(getitem(probs, (rows, labels)) + 1e-12).mean()
        backward(loss)
        adam_step(params, {"weight": weight.grad}, state, cfg)
    return np.abs(weight.values[:d]).max(axis=1)


def make_shift_split(
    table: RawTable,
    rng: Rng,
    q: float = 0.025,
    d_selected: int = 2,
) -> Tuple[TabularDataset, ShiftSpec, ShiftReport]:
    """
    Build an in-distribution train set and a mixed ID + tail test set.

    Args:
        table: encoded, unscaled data
        rng: stream for the base split and the GLM
        q: tail quantile per side
        d_selected: number of features whose tails define the shift

    Returns:
        (dataset with `test_shifted` mask, spec with selected features and
        bounds, report)
    """
    spec = ShiftSpec(q=q, d_selected=d_selected)
    numeric_idx = np.flatnonzero(table.numeric)
    if numeric_idx.size < d_selected:
        raise ConfigError(
            f"{table.name} has {numeric_idx.size} numeric features, shift split needs {d_selected}"
        )

    n = table.x.shape[0]
    order = rng.stream("base_split").permutation(n)
    n_base_test = int(round(n * spec.base_split))
    base_test = np.sort(order[:n_base_test])
    base_train = np.sort(order[n_base_test:])

    coefficients = fit_glm(table.x[base_train][:, numeric_idx], table.y[base_train], table.task, rng.stream("glm"))
    ranked = numeric_idx[np.argsort(-coefficients, kind="stable")]
    spec.selected = [int(i) for i in ranked[:d_selected]]

    tail = np.zeros(n, dtype=bool)
    for feature in spec.selected:
        column = table.x[base_train, feature]
        low, high = np.quantile(column, [q, 1.0 - q])
        spec.lower.append(float(low))
        spec.upper.append(float(high))
        tail |= (table.x[:, feature] < low) | (table.x[:, feature] > high)

    train_idx = base_train[~tail[base_train]]
    test_idx = np.sort(np.concatenate([base_test, base_train[tail[base_train]]]))
    dataset = split_table(table, train_idx, test_idx, test_shifted=tail[test_idx])

    names = [table.feature_names[i] for i in spec.selected]
    coef_by_name = {table.feature_names[i]: float(c) for i, c in zip(numeric_idx, coefficients)}
    report = ShiftReport(
        dataset=table.name,
        q=q,
        d_selected=d_selected,
        p_tail=spec.p_tail,
        base_split=spec.base_split,
        selected_features=names,
        coefficients=coef_by_name,
        lower_bounds=dict(zip(names, spec.lower)),
        upper_bounds=dict(zip(names, spec.upper)),
        n_train=int(train_idx.size),
        n_test=int(test_idx.size),
        n_test_shifted=int(tail[test_idx].sum()),
        test_fraction=float(test_idx.size / n),
    )
    logger.info(
        f"{table.name} - shift split on {names}: {report.n_train} train, {report.n_test} test "
        f"({report.n_test_shifted} in tails, test fraction {report.test_fraction:.3f})"
    )
    return dataset, spec, report
