from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Tuple

from errors import ConfigError, ParameterError
from layers import ADAPTERS, INIT_SCHEMES, canonical_adapters
from recurrent import GATES, canonical_gates

TASKS: Tuple[str, ...] = ("regression", "classification", "timeseries")
METHODS: Tuple[str, ...] = ("batch_ensemble", "mc_dropout", "deep_ensemble", "single")


@dataclass
class ModelConfig:
    """Architecture of one predictor"""

    # regression, classification or timeseries
    task: str

    # Feature count after preprocessing (1 for univariate series)
    input_dim: int

    # Widths of the MLP hidden layers
    hidden_dims: List[int] = field(default_factory=lambda: [32, 32])

    # Only used by classification
    num_classes: int = 2

    # K: members for BatchEnsemble / deep ensembles, passes for MC dropout
    ensemble_size: int = 10

    method: str = "batch_ensemble"

    # Dropout probability (MC dropout only)
    dropout_rate: float = 0.1

    # How many trailing layers are BatchEnsemble layers (None = all)
    be_layer_count: Optional[int] = None

    # GRUBE gates with BatchEnsemble transforms (time series only, None = all)
    gate_mask: Optional[Tuple[str, ...]] = None

    # Enabled adapter stacks on every BatchEnsemble layer
    adapter_mask: Tuple[str, ...] = ADAPTERS

    # random_sign or orthogonal
    init_scheme: str = "random_sign"

    # Strength of the orthogonality penalty on R and S stacks
    ortho_lambda: float = 0.0

    # GRU hidden size (time series only)
    recurrent_hidden: int = 32

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(f"Unknown task {self.task!r}; expected one of {TASKS}")
        if self.method not in METHODS:
            raise ConfigError(f"Unknown method {self.method!r}; expected one of {METHODS}")
        if self.input_dim < 1:
            raise ConfigError("Input dimension must be positive")
        self.hidden_dims = [int(d) for d in self.hidden_dims]
        if not self.hidden_dims or any(d < 1 for d in self.hidden_dims):
            raise ConfigError("hidden_dims must be a non-empty list of positive widths")
        if self.ensemble_size < 1:
            raise ConfigError("Ensemble size must be at least 1")
        if self.task == "classification" and self.num_classes < 2:
            raise ConfigError("Classification needs at least 2 classes")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError("Dropout rate must lie in [0, 1)")
        if self.init_scheme not in INIT_SCHEMES:
            raise ConfigError(f"Unknown init scheme {self.init_scheme!r}; expected one of {INIT_SCHEMES}")
        if self.ortho_lambda < 0:
            raise ConfigError("Orthogonality strength must be non-negative")
        if self.recurrent_hidden < 1:
            raise ConfigError("Recurrent hidden size must be positive")

        try:
            self.adapter_mask = canonical_adapters(self.adapter_mask)
            if self.gate_mask is not None:
                if self.task != "timeseries":
                    raise ConfigError("gate_mask only applies to the recurrent time-series model")
                self.gate_mask = canonical_gates(self.gate_mask)
        except ParameterError as exc:
            raise ConfigError(str(exc)) from exc

        if self.be_layer_count is not None and not 1 <= self.be_layer_count <= self.total_layers:
            raise ConfigError(
                f"be_layer_count must lie in [1, {self.total_layers}], got {self.be_layer_count}"
            )

    @property
    def total_layers(self) -> int:
        """Hidden layers plus the output layer, plus the recurrent layer for series"""
        recurrent = 1 if self.task == "timeseries" else 0
        return recurrent + len(self.hidden_dims) + 1

    @property
    def resolved_gates(self) -> Tuple[str, ...]:
        return GATES if self.gate_mask is None else self.gate_mask

    def is_be_layer(self, index: int) -> bool:
        """True when layer `index` (0 = first layer) is a BatchEnsemble layer"""
        if self.method != "batch_ensemble":
            return False
        count = self.total_layers if self.be_layer_count is None else self.be_layer_count
        return index >= self.total_layers - count

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["adapter_mask"] = list(self.adapter_mask)
        data["gate_mask"] = None if self.gate_mask is None else list(self.gate_mask)
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ModelConfig":
        data = dict(data)
        if data.get("adapter_mask") is not None:
            data["adapter_mask"] = tuple(data["adapter_mask"])
        if data.get("gate_mask") is not None:
            data["gate_mask"] = tuple(data["gate_mask"])
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"Unknown model settings: {sorted(unknown)}")
        return cls(**data)
