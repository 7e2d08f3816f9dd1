"""
Tabular ingestion: CSV + manifest, one-hot encoding with a missing-value
category, median imputation, shuffled 80/20 split and min-max scaling fitted
on the training split.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field

from errors import DataError
from numcore import Rng

logger = logging.getLogger(__name__)

MISSING_CATEGORY = "__missing__"


class DatasetSchema(BaseModel):
    """Manifest describing a CSV dataset"""

    name: str = "dataset"
    task: str
    target: str
    categorical: List[str] = Field(default_factory=list)
    drop: List[str] = Field(default_factory=list)

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "DatasetSchema":
        path = Path(path)
        if not path.is_file():
            raise DataError(f"Manifest {path} does not exist")
        return cls.model_validate(json.loads(path.read_text(encoding="utf-8")))


class MinMaxScaler:
    """Per-column min-max scaling; constant columns map to 0"""

    def __init__(self):
        self.minimum: Optional[np.ndarray] = None
        self.span: Optional[np.ndarray] = None

    def fit(self, x: np.ndarray) -> "MinMaxScaler":
        x = np.asarray(x, dtype=np.float64)
        if x.shape[0] == 0:
            raise DataError("cannot fit a scaler on zero rows")
        self.minimum = x.min(axis=0)
        self.span = x.max(axis=0) - self.minimum
        return self

    def scale(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        safe = np.where(self.span > 0, self.span, 1.0)
        return np.where(self.span > 0, (x - self.minimum) / safe, 0.0)

    def unscale(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return x * self.span + self.minimum

    def to_dict(self) -> dict:
        return {"minimum": np.atleast_1d(self.minimum).tolist(), "span": np.atleast_1d(self.span).tolist()}


@dataclass
class RawTable:
    """Encoded but unscaled table"""

    x: np.ndarray
    y: np.ndarray
    feature_names: List[str]
    # True for columns that came from numeric CSV columns
    numeric: np.ndarray
    task: str
    name: str = "dataset"
    class_labels: List[str] = field(default_factory=list)

    @property
    def num_classes(self) -> int:
        return len(self.class_labels)


@dataclass
class TabularDataset:
    """Scaled train/test split"""

    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    feature_names: List[str]
    numeric: np.ndarray
    task: str
    name: str
    scaler: MinMaxScaler
    target_scaler: Optional[MinMaxScaler] = None
    class_labels: List[str] = field(default_factory=list)

    # Test rows lying in a tail region (shift splits only)
    test_shifted: Optional[np.ndarray] = None

    @property
    def input_dim(self) -> int:
        return self.x_train.shape[1]

    @property
    def num_classes(self) -> int:
        return len(self.class_labels)


def _bad_rows(original: pd.Series, coerced: pd.Series) -> List[int]:
    # +2: one header line, 1-based line numbers
    mask = coerced.isna() & original.notna() & (original.astype(str).str.strip() != "")
    return [int(i) + 2 for i in np.flatnonzero(mask.to_numpy())]


def encode_frame(frame: pd.DataFrame, schema: DatasetSchema) -> RawTable:
    """
    Turn a raw DataFrame into a numeric design matrix.

    Numeric columns are coerced (unparseable cells are a DataError naming the
    CSV lines) and missing values imputed with the column median. Categorical
    columns are one-hot encoded with an explicit missing category.
    """
    if schema.target not in frame.columns:
        raise DataError(f"Target column {schema.target!r} missing from {schema.name}")
    unknown = set(schema.categorical) - set(frame.columns)
    if unknown:
        raise DataError(f"Categorical columns {sorted(unknown)} missing from {schema.name}")

    target = frame[schema.target]
    missing_target = [int(i) + 2 for i in np.flatnonzero(target.isna().to_numpy())]
    if missing_target:
        raise DataError(f"Missing target values on lines {missing_target[:10]}")

    class_labels: List[str] = []
    if schema.task == "classification":
        labels = target.astype(str)
        class_labels = sorted(labels.unique())
        if len(class_labels) < 2:
            raise DataError("Classification target needs at least two classes")
        y = labels.map({c: i for i, c in enumerate(class_labels)}).to_numpy(dtype=np.int64)
    else:
        coerced = pd.to_numeric(target, errors="coerce")
        bad = _bad_rows(target, coerced)
        if bad:
            raise DataError(f"Unparseable target values on lines {bad[:10]}")
        y = coerced.to_numpy(dtype=np.float64)

    features = frame.drop(columns=[schema.target] + [c for c in schema.drop if c in frame.columns])
    blocks, names, numeric = [], [], []
    for column in features.columns:
        values = features[column]
        if column in schema.categorical:
            dummies = pd.get_dummies(values.fillna(MISSING_CATEGORY).astype(str), prefix=column, prefix_sep="=")
            dummies = dummies.reindex(sorted(dummies.columns), axis=1)
            blocks.append(dummies.to_numpy(dtype=np.float64))
            names.extend(dummies.columns)
            numeric.extend([False] * dummies.shape[1])
            continue
        coerced = pd.to_numeric(values, errors="coerce")
        bad = _bad_rows(values, coerced)
        if bad:
            raise DataError(f"Unparseable values in column {column!r} on lines {bad[:10]}")
        median = coerced.median()
        blocks.append(coerced.fillna(0.0 if np.isnan(median) else median).to_numpy(dtype=np.float64)[:, None])
        names.append(column)
        numeric.append(True)

    if not blocks:
        raise DataError(f"{schema.name} has no feature columns")
    return RawTable(
        x=np.hstack(blocks),
        y=y,
        feature_names=list(names),
        numeric=np.array(numeric, dtype=bool),
        task=schema.task,
        name=schema.name,
        class_labels=class_labels,
    )


def load_table(source: Union[str, Path, pd.DataFrame], schema: DatasetSchema) -> RawTable:
    """Read a CSV (or take a DataFrame) and encode it"""
    if isinstance(source, pd.DataFrame):
        frame = source
    else:
        path = Path(source)
        if not path.is_file():
            raise DataError(f"Dataset {path} does not exist")
        try:
            frame = pd.read_csv(path, encoding="utf-8")
        except (pd.errors.ParserError, UnicodeDecodeError) as exc:
            raise DataError(f"Cannot parse {path}: {exc}") from exc
    return encode_frame(frame, schema)


def table_from_arrays(x: np.ndarray, y: np.ndarray, task: str, name: str = "synthetic") -> RawTable:
    x = np.asarray(x, dtype=np.float64)
    class_labels = []
    if task == "classification":
        y = np.asarray(y).astype(np.int64)
        class_labels = [str(c) for c in range(int(y.max()) + 1)]
    return RawTable(
        x=x,
        y=np.asarray(y),
        feature_names=[f"x{i}" for i in range(x.shape[1])],
        numeric=np.ones(x.shape[1], dtype=bool),
        task=task,
        name=name,
        class_labels=class_labels,
    )


def split_table(
    table: RawTable,
    train_idx: np.ndarray,
    test_idx: np.ndarray,
    test_shifted: Optional[np.ndarray] = None,
) -> TabularDataset:
    """Scale features (and regression targets) with training statistics"""
    if len(train_idx) == 0 or len(test_idx) == 0:
        raise DataError(f"Split of {table.name} leaves an empty train or test set")
    scaler = MinMaxScaler().fit(table.x[train_idx])
    target_scaler = None
    y_train, y_test = table.y[train_idx], table.y[test_idx]
    if table.task != "classification":
        target_scaler = MinMaxScaler().fit(y_train[:, None])
        y_train = target_scaler.scale(y_train[:, None])[:, 0]
        y_test = target_scaler.scale(y_test[:, None])[:, 0]
    return TabularDataset(
        x_train=scaler.scale(table.x[train_idx]),
        y_train=y_train,
        x_test=scaler.scale(table.x[test_idx]),
        y_test=y_test,
        feature_names=table.feature_names,
        numeric=table.numeric,
        task=table.task,
        name=table.name,
        scaler=scaler,
        target_scaler=target_scaler,
        class_labels=table.class_labels,
        test_shifted=test_shifted,
    )


def random_split(table: RawTable, rng: Rng, test_fraction: float = 0.2) -> TabularDataset:
    """Shuffled split with round(n * test_fraction) test rows"""
    n = table.x.shape[0]
    order = rng.permutation(n)
    n_test = int(round(n * test_fraction))
    return split_table(table, np.sort(order[n_test:]), np.sort(order[:n_test]))


def load_and_scale(
    source: Union[str, Path, pd.DataFrame],
    schema: DatasetSchema,
    rng: Rng,
    test_fraction: float = 0.2,
) -> TabularDataset:
    """
    Load, encode, split 80/20 and min-max scale a tabular dataset.

    Args:
        source: CSV path or DataFrame
        schema: target and categorical columns
        rng: stream for the shuffled split
        test_fraction: share of rows held out

    Returns:
        TabularDataset scaled with training statistics
    """
    table = load_table(source, schema)
    dataset = random_split(table, rng, test_fraction)
    logger.info(
        f"{schema.name} - {dataset.x_train.shape[0]} train / {dataset.x_test.shape[0]} test rows, "
        f"{dataset.input_dim} features"
    )
    return dataset
