"""
Plain GRU and GRUBE (BatchEnsemble GRU) cells, the generic BatchEnsemble RNN
step and sequence unrolling.

Gates are keyed "F" (reset), "Z" (update) and "C" (candidate). Each gate reads
the concatenation [x_t, h] (the candidate reads [x_t, f_t * h_prev]).
"""

from __future__ import annotations

import logging
from typing import Dict, Iterable, List, Optional, Tuple, Union

import numpy as np

from errors import ContractError, ParameterError, ShapeError
from layers import ADAPTERS, DenseLinear, EnsembleLinear, canonical_adapters
from numcore import Rng, Tensor, as_tensor, concat, repeat, sigmoid, tanh

logger = logging.getLogger(__name__)

GATES: Tuple[str, ...] = ("C", "Z", "F")


def canonical_gates(gates: Iterable[str]) -> Tuple[str, ...]:
    """Validate a gate subset and return it in C, Z, F order"""
    chosen = set(gates)
    unknown = chosen - set(GATES)
    if unknown:
        raise ParameterError(f"unknown gates {sorted(unknown)}; expected a subset of {GATES}")
    return tuple(g for g in GATES if g in chosen)


def _check_step_shapes(x_t: Tensor, h_prev: Tensor, input_size: int, hidden_size: int) -> None:
    if x_t.ndim != 2 or x_t.shape[1] != input_size:
        raise ShapeError(f"expected input of shape (*, {input_size}), got {x_t.shape}")
    if h_prev.ndim != 2 or h_prev.shape != (x_t.shape[0], hidden_size):
        raise ShapeError(
            f"expected hidden state of shape ({x_t.shape[0]}, {hidden_size}), got {h_prev.shape}"
        )


class GruCell:
    """
    Baseline GRU with two bias vectors per gate: the input bias lives on the
    gate's DenseLinear, the hidden bias is a separate vector.
    """

    def __init__(self, input_size: int, hidden_size: int, rng: Rng):
        self.input_size = input_size
        self.hidden_size = hidden_size
        self.ensemble_size = 1
        self.gates: Dict[str, DenseLinear] = {}
        self.hidden_bias: Dict[str, Tensor] = {}
        for gate in GATES:
            self.gates[gate] = DenseLinear(input_size + hidden_size, hidden_size, rng.stream(gate))
            self.hidden_bias[gate] = Tensor(np.zeros(hidden_size), requires_grad=True)

    def step(self, x_t: Tensor, h_prev: Tensor) -> Tensor:
        return gru_step(self, x_t, h_prev)

    def named_parameters(self, prefix: str = "") -> Dict[str, Tensor]:
        params: Dict[str, Tensor] = {}
        for gate in GATES:
            params.update(self.gates[gate].named_parameters(f"{prefix}{gate}."))
            params[f"{prefix}{gate}.hidden_bias"] = self.hidden_bias[gate]
        return params

    @property
    def param_count(self) -> int:
        return sum(p.size for p in self.named_parameters().values())


class GrubeCell:
    """
    GRU whose gate transforms are BatchEnsemble layers.

    Gates in `gate_mask` share one weight matrix (no shared bias) modulated
    by per-member R, S and B stacks; the remaining gates are plain
    shared-weight transforms with a single shared bias.
    """

    def __init__(
        self,
        input_size: int,
        hidden_size: int,
        ensemble_size: int,
        rng: Rng,
        gate_mask: Iterable[str] = GATES,
        adapters: Iterable[str] = ADAPTERS,
        init_scheme: str = "random_sign",
        strict_init: bool = True,
    ):
        if ensemble_size < 1:
            raise ParameterError(f"ensemble size must be >= 1, got {ensemble_size}")
        self.input_size = input_size
        self.hidden_size = hidden_size
        self.ensemble_size = ensemble_size
        self.gate_mask = canonical_gates(gate_mask)
        self.adapters = canonical_adapters(adapters)
        self.gates: Dict[str, Union[EnsembleLinear, DenseLinear]] = {}
        for gate in GATES:
            if gate in self.gate_mask:
                self.gates[gate] = EnsembleLinear(
                    input_size + hidden_size,
                    hidden_size,
                    ensemble_size,
                    rng.stream(gate),
                    adapters=self.adapters,
                    init_scheme=init_scheme,
                    strict_init=strict_init,
                )
            else:
                self.gates[gate] = DenseLinear(input_size + hidden_size, hidden_size, rng.stream(gate))

    def step(self, x_t: Tensor, h_prev: Tensor) -> Tensor:
        return grube_step(self, x_t, h_prev)

    def ensemble_layers(self) -> List[EnsembleLinear]:
        return [self.gates[g] for g in GATES if g in self.gate_mask]

    def named_parameters(self, prefix: str = "") -> Dict[str, Tensor]:
        params: Dict[str, Tensor] = {}
        for gate in GATES:
            params.update(self.gates[gate].named_parameters(f"{prefix}{gate}."))
        return params

    @property
    def param_count(self) -> int:
        return sum(p.size for p in self.named_parameters().values())


def _gru_update(cell, x_t: Tensor, h_prev: Tensor, extra_bias: Optional[Dict[str, Tensor]]) -> Tensor:
    def gate_input(gate: str, z: Tensor) -> Tensor:
        out = cell.gates[gate](z)
        if extra_bias is not None:
            out = out + extra_bias[gate]
        return out

    xh = concat([x_t, h_prev], axis=1)
    f_t = sigmoid(gate_input("F", xh))
    z_t = sigmoid(gate_input("Z", xh))
    candidate = tanh(gate_input("C", concat([x_t, f_t * h_prev], axis=1)))
    return (1.0 - z_t) * h_prev + z_t * candidate


def gru_step(cell: GruCell, x_t: Tensor, h_prev: Tensor) -> Tensor:
    """
    One GRU update h_t = (1 - z_t) * h_prev + z_t * candidate.

    Args:
        cell: plain GRU cell
        x_t: (n, p) inputs
        h_prev: (n, q) previous hidden state

    Returns:
        (n, q) next hidden state
    """
    x_t, h_prev = as_tensor(x_t), as_tensor(h_prev)
    _check_step_shapes(x_t, h_prev, cell.input_size, cell.hidden_size)
    return _gru_update(cell, x_t, h_prev, cell.hidden_bias)


def grube_step(cell: GrubeCell, x_t: Tensor, h_prev: Tensor) -> Tensor:
    """Advance all K members at once; rows grouped as i*K + k"""
    x_t, h_prev = as_tensor(x_t), as_tensor(h_prev)
    _check_step_shapes(x_t, h_prev, cell.input_size, cell.hidden_size)
    if x_t.shape[0] % cell.ensemble_size != 0:
        raise ContractError(
            f"{x_t.shape[0]} rows cannot be grouped into {cell.ensemble_size} ensemble members"
        )
    return _gru_update(cell, x_t, h_prev, None)


def be_rnn_step(layer: EnsembleLinear, x_t: Tensor, h_prev: Tensor) -> Tensor:
    """Plain BatchEnsemble recurrence h_t = tanh(be_forward([x_t, h_prev]))"""
    x_t, h_prev = as_tensor(x_t), as_tensor(h_prev)
    hidden = layer.out_features
    _check_step_shapes(x_t, h_prev, layer.in_features - hidden, hidden)
    return tanh(layer(concat([x_t, h_prev], axis=1)))


def unroll(
    cell,
    x_seq: Tensor,
    h0: Optional[Tensor] = None,
    grouped: bool = False,
    return_all: bool = False,
) -> Union[Tensor, Tuple[Tensor, List[Tensor]]]:
    """
    Apply the cell's step over a sequence.

    Args:
        cell: GruCell or GrubeCell
        x_seq: (n, L, p) sequence, or (n*K, L, p) when `grouped`
        h0: initial hidden state, zeros when omitted
        grouped: x_seq rows are already replicated per member
        return_all: also return every intermediate hidden state

    Returns:
        final hidden state, plus the list of all L states when `return_all`
    """
    x_seq = as_tensor(x_seq)
    if x_seq.ndim != 3:
        raise ShapeError(f"expected a (n, L, p) sequence, got {x_seq.shape}")
    length = x_seq.shape[1]
    if length < 1:
        raise ParameterError("cannot unroll an empty sequence")
    if not grouped and cell.ensemble_size > 1:
        x_seq = repeat(x_seq, cell.ensemble_size, axis=0)

    rows = x_seq.shape[0]
    h = as_tensor(h0) if h0 is not None else Tensor(np.zeros((rows, cell.hidden_size)))
    states: List[Tensor] = []
    for t in range(length):
        h = cell.step(x_seq[:, t, :], h)
        if return_all:
            states.append(h)
    if return_all:
        return h, states
    return h
