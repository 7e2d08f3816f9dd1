"""
Univariate series: chronological train/test boundary, min-max scaling fitted
on the training part and (context, target) windows with stride 1.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
import pandas as pd

from data.tabular import MinMaxScaler
from errors import DataError

logger = logging.getLogger(__name__)


def window_series(series, context: int, horizon: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Every overlapping (context, target) pair.

    Args:
        series: 1-D values
        context: L input steps
        horizon: H target steps

    Returns:
        contexts (m, L) and targets (m, H) with m = len - L - H + 1; window j
        reads indices j..j+L-1 and targets j+L..j+L+H-1
    """
    series = np.asarray(series, dtype=np.float64).reshape(-1)
    if context < 1 or horizon < 1:
        raise DataError("context and horizon must be at least 1")
    count = series.size - context - horizon + 1
    if count < 1:
        raise DataError(
            f"series of length {series.size} is too short for context {context} + horizon {horizon}"
        )
    windows = np.lib.stride_tricks.sliding_window_view(series, context + horizon)[:count]
    return windows[:, :context].copy(), windows[:, context:].copy()


@dataclass
class SeriesDataset:
    """Scaled series split chronologically at `boundary`"""

    values: np.ndarray
    boundary: int
    context: int
    horizon: int
    scaler: MinMaxScaler
    name: str = "series"

    def __post_init__(self):
        if not 0 < self.boundary < self.values.size:
            raise DataError(f"boundary {self.boundary} must fall inside a series of {self.values.size}")

    @property
    def input_dim(self) -> int:
        return 1

    def train_windows(self) -> Tuple[np.ndarray, np.ndarray]:
        """Windows whose context and targets all precede the boundary"""
        return window_series(self.values[: self.boundary], self.context, self.horizon)

    def test_window_starts(self) -> np.ndarray:
        first = max(self.boundary - self.context, 0)
        last = self.values.size - self.context - self.horizon
        if last < first:
            raise DataError("no test window fits after the boundary")
        return np.arange(first, last + 1)

    def test_windows(self) -> Tuple[np.ndarray, np.ndarray]:
        """Windows whose targets start at or after the boundary; contexts may reach back"""
        contexts, targets = window_series(self.values, self.context, self.horizon)
        starts = self.test_window_starts()
        return contexts[starts], targets[starts]


def series_from_values(
    values,
    context: int = 12,
    horizon: int = 5,
    train_fraction: float = 0.8,
    name: str = "series",
    boundary: Optional[int] = None,
) -> SeriesDataset:
    """Split chronologically and scale with training statistics"""
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    if np.any(~np.isfinite(values)):
        bad = np.flatnonzero(~np.isfinite(values))
        raise DataError(f"series {name} has missing or non-finite values at positions {bad[:10].tolist()}")
    if boundary is None:
        boundary = int(round(values.size * train_fraction))
    if boundary < context + horizon:
        raise DataError(f"training part of {name} ({boundary} points) is shorter than one window")
    scaler = MinMaxScaler().fit(values[:boundary, None])
    scaled = scaler.scale(values[:, None])[:, 0]
    return SeriesDataset(values=scaled, boundary=boundary, context=context, horizon=horizon, scaler=scaler, name=name)


def load_series(
    path: Union[str, Path],
    column: Optional[str] = None,
    context: int = 12,
    horizon: int = 5,
    train_fraction: float = 0.8,
) -> SeriesDataset:
    """
    Read one numeric column of a CSV as a series (last column by default).
    Rows are taken in file order.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"Series file {path} does not exist")
    frame = pd.read_csv(path, encoding="utf-8")
    if frame.empty:
        raise DataError(f"Series file {path} is empty")
    column = column or frame.columns[-1]
    if column not in frame.columns:
        raise DataError(f"Column {column!r} missing from {path}")
    raw = frame[column]
    values = pd.to_numeric(raw, errors="coerce")
    bad = [int(i) + 2 for i in np.flatnonzero(values.isna().to_numpy())]
    if bad:
        raise DataError(f"Unparseable or missing values in {column!r} on lines {bad[:10]}")
    dataset = series_from_values(values.to_numpy(), context, horizon, train_fraction, name=path.stem)
    logger.info(f"{path.stem} - {dataset.boundary} train points, {values.size - dataset.boundary} test points")
    return dataset
