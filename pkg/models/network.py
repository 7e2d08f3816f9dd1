"""
MLP / recurrent trunk shared by every method, with heteroscedastic or softmax
heads. A layer is a BatchEnsemble layer when the config says so; every other
layer is dense and shared by all members.
"""

import logging
from typing import Dict, List, Optional, Union

import numpy as np

from base_model import HeadOutput
from errors import ShapeError
from layers import DenseLinear, DropoutSpec, EnsembleLinear, dropout, dropout_mask, orthogonality_penalty
from model_config import ModelConfig
from numcore import Rng, Tensor, as_tensor, clip, relu, softmax
from recurrent import GruCell, GrubeCell, unroll

logger = logging.getLogger(__name__)

LOG_VAR_RANGE = (-10.0, 10.0)

Linear = Union[DenseLinear, EnsembleLinear]


class Network:
    """Layer stack for one model; all forward methods take member-grouped rows"""

    def __init__(self, config: ModelConfig, rng: Rng, ensemble_size: int = 1, dropout_rate: float = 0.0):
        self.config = config
        self.ensemble_size = ensemble_size
        self.dropout = DropoutSpec(rate=dropout_rate, active=dropout_rate > 0.0)
        K = ensemble_size
        layer_index = 0

        def linear(fan_in: int, fan_out: int, index: int, stream: str) -> Linear:
            if config.is_be_layer(index):
                return EnsembleLinear(
                    fan_in,
                    fan_out,
                    K,
                    rng.stream(stream),
                    adapters=config.adapter_mask,
                    init_scheme=config.init_scheme,
                    strict_init=False,
                )
            return DenseLinear(fan_in, fan_out, rng.stream(stream))

        self.recurrent: Optional[Union[GruCell, GrubeCell]] = None
        width = config.input_dim
        if config.task == "timeseries":
            if config.is_be_layer(layer_index):
                self.recurrent = GrubeCell(
                    config.input_dim,
                    config.recurrent_hidden,
                    K,
                    rng.stream("recurrent"),
                    gate_mask=config.resolved_gates,
                    adapters=config.adapter_mask,
                    init_scheme=config.init_scheme,
                    strict_init=False,
                )
            else:
                self.recurrent = GruCell(config.input_dim, config.recurrent_hidden, rng.stream("recurrent"))
            width = config.recurrent_hidden
            layer_index += 1

        self.hidden: List[Linear] = []
        for i, dim in enumerate(config.hidden_dims):
            self.hidden.append(linear(width, dim, layer_index, f"hidden_{i}"))
            width = dim
            layer_index += 1

        self.heads: Dict[str, Linear] = {}
        if config.task == "classification":
            self.heads["logits"] = linear(width, config.num_classes, layer_index, "head_logits")
        else:
            self.heads["mean"] = linear(width, 1, layer_index, "head_mean")
            self.heads["log_var"] = linear(width, 1, layer_index, "head_log_var")

    # ------------------------------------------------------------------
    # Forward pieces
    # ------------------------------------------------------------------

    def _mlp(
        self,
        z: Tensor,
        members: int,
        rng: Optional[Rng],
        masks: Optional[List[np.ndarray]] = None,
    ) -> HeadOutput:
        for i, layer in enumerate(self.hidden):
            z = relu(layer(z))
            if self.dropout.active:
                z = dropout(z, self.dropout, rng, None if masks is None else masks[i])
        rows = z.shape[0]
        if "logits" in self.heads:
            return HeadOutput(members=members, probs=softmax(self.heads["logits"](z), axis=1))
        mean = self.heads["mean"](z).reshape(rows)
        log_var = clip(self.heads["log_var"](z).reshape(rows), *LOG_VAR_RANGE)
        return HeadOutput(members=members, mean=mean, log_var=log_var)

    def forward(self, x: Tensor, members: int, rng: Optional[Rng] = None) -> HeadOutput:
        """Tabular forward pass on (n*members, p) grouped rows"""
        x = as_tensor(x)
        if x.ndim != 2 or x.shape[1] != self.config.input_dim:
            raise ShapeError(f"expected inputs of shape (*, {self.config.input_dim}), got {x.shape}")
        return self._mlp(x, members, rng)

    def encode(self, x_seq: Tensor) -> Tensor:
        """Run the recurrent layer over grouped (n*members, L, 1) context windows"""
        return unroll(self.recurrent, x_seq, grouped=True)

    def rollout_masks(self, rows: int, rng: Optional[Rng]) -> Optional[List[np.ndarray]]:
        """One dropout mask per hidden layer, held fixed for a whole rollout"""
        if not self.dropout.active:
            return None
        return [dropout_mask((rows, layer.out_features), self.dropout, rng) for layer in self.hidden]

    def emit(
        self,
        h: Tensor,
        members: int,
        rng: Optional[Rng] = None,
        masks: Optional[List[np.ndarray]] = None,
    ) -> HeadOutput:
        """Heads applied to recurrent states"""
        return self._mlp(h, members, rng, masks)

    def advance(self, x_t: Tensor, h: Tensor) -> Tensor:
        return self.recurrent.step(x_t, h)

    # ------------------------------------------------------------------
    # Parameters
    # ------------------------------------------------------------------

    def ensemble_layers(self) -> List[EnsembleLinear]:
        layers: List[EnsembleLinear] = []
        if isinstance(self.recurrent, GrubeCell):
            layers.extend(self.recurrent.ensemble_layers())
        layers.extend(l for l in self.hidden if isinstance(l, EnsembleLinear))
        layers.extend(l for l in self.heads.values() if isinstance(l, EnsembleLinear))
        return layers

    def penalty(self, strength: float) -> Optional[Tensor]:
        """Orthogonality penalty summed over every enabled adapter stack of every BE layer"""
        if strength == 0.0:
            return None
        total = None
        for layer in self.ensemble_layers():
            for stack in layer.adapter_stacks().values():
                term = orthogonality_penalty(stack, strength)
                total = term if total is None else total + term
        return total

    def named_parameters(self) -> Dict[str, Tensor]:
        params: Dict[str, Tensor] = {}
        if self.recurrent is not None:
            params.update(self.recurrent.named_parameters("recurrent."))
        for i, layer in enumerate(self.hidden):
            params.update(layer.named_parameters(f"hidden.{i}."))
        for name, layer in self.heads.items():
            params.update(layer.named_parameters(f"head.{name}."))
        return params
