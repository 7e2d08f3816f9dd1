"""
Experiment description: which data, which method, which hyperparameters and
where the artifacts go. Read from JSON and overridable from the command line.
"""

import json
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Union

from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator

from errors import ConfigError
from forecast import ForecastConfig
from model_config import METHODS, TASKS, ModelConfig
from trainer import TrainConfig

DATASET_KINDS = ("csv", "ackley", "ar1", "random_walk", "series_csv")
SERIES_KINDS = ("ar1", "random_walk", "series_csv")


class DatasetRef(BaseModel):
    """Where the data comes from"""

    kind: Literal["csv", "ackley", "ar1", "random_walk", "series_csv"] = "ackley"

    # csv / series_csv: data file; csv also needs the manifest
    path: Optional[str] = None
    manifest: Optional[str] = None

    # series_csv: column holding the values (last column when unset)
    column: Optional[str] = None

    # Synthetic generators
    n: int = Field(default=2000, ge=1)
    d: int = Field(default=10, ge=1)
    phi: float = 0.8
    sigma: float = Field(default=1.0, ge=0.0)

    @property
    def label(self) -> str:
        if self.path:
            return Path(self.path).stem
        return self.kind

    @model_validator(mode="after")
    def check_files(self) -> "DatasetRef":
        if self.kind in ("csv", "series_csv"):
            if not self.path:
                raise ValueError(f"dataset kind {self.kind} needs a path")
            if not Path(self.path).is_file():
                raise ValueError(f"dataset file {self.path} does not exist")
        if self.kind == "csv":
            if not self.manifest:
                raise ValueError("csv datasets need a manifest")
            if not Path(self.manifest).is_file():
                raise ValueError(f"manifest {self.manifest} does not exist")
        return self


class ExperimentConfig(BaseModel):
    """One experiment: a dataset, a method and its settings, run over several seeds"""

    name: str = "experiment"
    dataset: DatasetRef = Field(default_factory=DatasetRef)
    task: str = "regression"
    method: str = "batch_ensemble"

    # Overrides for ModelConfig / TrainConfig / ForecastConfig fields
    network: Dict[str, Any] = Field(default_factory=dict)
    training: Dict[str, Any] = Field(default_factory=dict)
    forecast: Dict[str, Any] = Field(default_factory=dict)

    # Tail-quantile shift split instead of the plain 80/20 split
    shift: bool = False
    shift_quantile: float = Field(default=0.025, ge=0.0, lt=0.5)
    shift_features: int = Field(default=2, ge=1)

    # Training seeds; the data split always uses data_seed
    seeds: List[int] = Field(default_factory=lambda: [0, 1, 2, 3, 4], min_length=1)
    data_seed: int = Field(default=0, ge=0)

    output_dir: str = "runs"
    workers: int = Field(default=1, ge=1)

    # ECE bins and number of evenly spaced interval coverages
    n_bins: int = Field(default=15, ge=1)
    coverage_levels: int = Field(default=39, ge=1)

    @field_validator("task")
    @classmethod
    def check_task(cls, value: str) -> str:
        if value not in TASKS:
            raise ValueError(f"unknown task {value!r}; expected one of {TASKS}")
        return value

    @field_validator("method")
    @classmethod
    def check_method(cls, value: str) -> str:
        if value not in METHODS:
            raise ValueError(f"unknown method {value!r}; expected one of {METHODS}")
        return value

    @field_validator("seeds")
    @classmethod
    def check_seeds(cls, value: List[int]) -> List[int]:
        if any(s < 0 for s in value):
            raise ValueError("seeds must be non-negative")
        if len(set(value)) != len(value):
            raise ValueError("seeds must be distinct")
        return value

    @model_validator(mode="after")
    def check_combination(self) -> "ExperimentConfig":
        series = self.dataset.kind in SERIES_KINDS
        if series != (self.task == "timeseries"):
            raise ValueError(f"dataset kind {self.dataset.kind} does not fit task {self.task}")
        if self.shift and series:
            raise ValueError("shift splits apply to tabular data only")
        return self

    @property
    def run_dir(self) -> Path:
        return Path(self.output_dir) / self.name

    # ------------------------------------------------------------------
    # Typed configs
    # ------------------------------------------------------------------

    def build_model_config(self, input_dim: int, num_classes: int = 2) -> ModelConfig:
        """ModelConfig for the loaded data with the `network` overrides applied"""
        fields = {
            "task": self.task,
            "method": self.method,
            "input_dim": input_dim,
            "num_classes": num_classes,
        }
        fields.update(self.network)
        return ModelConfig.from_dict(fields)

    def build_train_config(self) -> TrainConfig:
        fields = {"seeds": list(self.seeds), "workers": self.workers}
        fields.update(self.training)
        return _construct(TrainConfig, fields)

    def build_forecast_config(self) -> ForecastConfig:
        """Context and horizon follow the training windows unless overridden"""
        train = self.build_train_config()
        fields = {"context": train.context, "horizon": train.horizon}
        fields.update(self.forecast)
        return _construct(ForecastConfig, fields)

    # ------------------------------------------------------------------
    # Files
    # ------------------------------------------------------------------

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "ExperimentConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"Config file {path} does not exist")
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"Config file {path} is not valid JSON: {exc}") from exc
        return cls.model_validate(data)

    def write(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.model_dump_json(indent=2), encoding="utf-8")
        return path


def _construct(cls, fields: Dict[str, Any]):
    unknown = set(fields) - set(cls.__dataclass_fields__)
    if unknown:
        raise ConfigError(f"Unknown {cls.__name__} settings: {sorted(unknown)}")
    return cls(**fields)


def create_default_config() -> ExperimentConfig:
    """
    Create the default experiment: BatchEnsemble (K=10) on Ackley regression

    Returns:
        ExperimentConfig with the standard hyperparameters
    """
    return ExperimentConfig()


def create_custom_config(
    name: str = "experiment",
    dataset: Optional[DatasetRef] = None,
    task: str = "regression",
    method: str = "batch_ensemble",
    seeds: Optional[List[int]] = None,
    epochs: Optional[int] = None,
    ensemble_size: Optional[int] = None,
    shift: bool = False,
    output_dir: str = "runs",
    workers: int = 1,
    **network: Any,
) -> ExperimentConfig:
    """
    Create a custom experiment

    Args:
        name: run directory name
        dataset: data reference (None = Ackley)
        task: regression, classification or timeseries
        method: batch_ensemble, mc_dropout, deep_ensemble or single
        seeds: training seeds (None = 0..4)
        epochs: training epochs (None = default)
        ensemble_size: K (None = default)
        shift: use the tail-quantile shift split
        output_dir: parent directory of the run directory
        workers: concurrent seeds
        **network: further ModelConfig overrides

    Returns:
        Custom ExperimentConfig
    """
    if dataset is None:
        dataset = DatasetRef(kind="ar1" if task == "timeseries" else "ackley")
    training: Dict[str, Any] = {}
    if epochs is not None:
        training["epochs"] = epochs
    if ensemble_size is not None:
        network["ensemble_size"] = ensemble_size
    try:
        return ExperimentConfig(
            name=name,
            dataset=dataset,
            task=task,
            method=method,
            network=network,
            training=training,
            shift=shift,
            seeds=seeds if seeds is not None else [0, 1, 2, 3, 4],
            output_dir=output_dir,
            workers=workers,
        )
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc
