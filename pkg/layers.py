"""
Dense and BatchEnsemble linear layers, dropout, adapter initialization and the
orthogonality penalty on adapter stacks.

Member layout: a BatchEnsemble activation matrix has n*K rows and row
(i*K + k) belongs to member k for sample i.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, Iterable, Optional, Tuple

import numpy as np

from errors import ContractError, OrthogonalityError, ParameterError, ShapeError
from numcore import Rng, Tensor, as_tensor, mul, repeat, square

logger = logging.getLogger(__name__)

ADAPTERS: Tuple[str, ...] = ("R", "S", "B")
INIT_SCHEMES: Tuple[str, ...] = ("random_sign", "orthogonal")


def canonical_adapters(adapters: Iterable[str]) -> Tuple[str, ...]:
    """Validate an adapter subset and return it in R, S, B order"""
    chosen = set(adapters)
    unknown = chosen - set(ADAPTERS)
    if unknown:
        raise ParameterError(f"unknown adapters {sorted(unknown)}; expected a subset of {ADAPTERS}")
    return tuple(a for a in ADAPTERS if a in chosen)


def _uniform_weight(rng: Rng, fan_in: int, fan_out: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, (fan_in, fan_out))


class DenseLinear:
    """Plain affine map z @ W + b"""

    def __init__(self, in_features: int, out_features: int, rng: Rng, bias: bool = True):
        self.in_features = in_features
        self.out_features = out_features
        self.weight = Tensor(_uniform_weight(rng, in_features, out_features), requires_grad=True)
        self.bias = Tensor(np.zeros(out_features), requires_grad=True) if bias else None

    def __call__(self, z: Tensor) -> Tensor:
        if z.ndim != 2 or z.shape[1] != self.in_features:
            raise ShapeError(
                f"DenseLinear expects (*, {self.in_features}) input, got {z.shape}"
            )
        out = z @ self.weight
        if self.bias is not None:
            out = out + self.bias
        return out

    def named_parameters(self, prefix: str = "") -> Dict[str, Tensor]:
        params = {f"{prefix}weight": self.weight}
        if self.bias is not None:
            params[f"{prefix}bias"] = self.bias
        return params

    @property
    def param_count(self) -> int:
        return sum(p.size for p in self.named_parameters().values())


class EnsembleLinear:
    """
    BatchEnsemble layer: shared W (p x q) modulated per member by R (K x p),
    S (K x q) and B (K x q).

    Output for member k: ((z * r_k) @ W) * s_k + b_k. A disabled adapter is
    simply absent, which is the same as holding it at its neutral value
    (1 for R and S, 0 for B).
    """

    def __init__(
        self,
        in_features: int,
        out_features: int,
        ensemble_size: int,
        rng: Rng,
        adapters: Iterable[str] = ADAPTERS,
        init_scheme: str = "random_sign",
        strict_init: bool = True,
    ):
        if ensemble_size < 1:
            raise ParameterError(f"ensemble size must be >= 1, got {ensemble_size}")
        self.in_features = in_features
        self.out_features = out_features
        self.ensemble_size = ensemble_size
        self.enabled_adapters = canonical_adapters(adapters)

        K = ensemble_size
        self.weight = Tensor(_uniform_weight(rng, in_features, out_features), requires_grad=True)
        self.r = Tensor(np.ones((K, in_features)), requires_grad=True) if "R" in self.enabled_adapters else None
        self.s = Tensor(np.ones((K, out_features)), requires_grad=True) if "S" in self.enabled_adapters else None
        self.b = Tensor(np.zeros((K, out_features)), requires_grad=True) if "B" in self.enabled_adapters else None
        self.init_scheme = init_scheme
        init_adapters(self, init_scheme, rng, strict=strict_init)

    def __call__(self, z: Tensor) -> Tensor:
        return be_forward(self, z)

    def adapter_stacks(self) -> Dict[str, Tensor]:
        stacks = {"R": self.r, "S": self.s, "B": self.b}
        return {name: t for name, t in stacks.items() if t is not None}

    def named_parameters(self, prefix: str = "") -> Dict[str, Tensor]:
        params = {f"{prefix}weight": self.weight}
        for name, stack in self.adapter_stacks().items():
            params[f"{prefix}{name.lower()}"] = stack
        return params

    @property
    def param_count(self) -> int:
        return sum(p.size for p in self.named_parameters().values())

    def orthogonal_feasible(self, stack: str) -> bool:
        width = self.in_features if stack == "R" else self.out_features
        return self.ensemble_size <= width


def replicate_members(x: Tensor, ensemble_size: int) -> Tensor:
    """Repeat every sample K times so row i*K + k is sample i for member k"""
    return repeat(as_tensor(x), ensemble_size, axis=0)


def be_forward(layer: EnsembleLinear, z: Tensor) -> Tensor:
    """
    Vectorized BatchEnsemble affine map ((Z * R) W) * S + B, before the nonlinearity.

    Args:
        layer: the BatchEnsemble layer
        z: (n*K, p) activations grouped by member

    Returns:
        (n*K, q) tensor
    """
    p, q, K = layer.in_features, layer.out_features, layer.ensemble_size
    if z.ndim != 2 or z.shape[1] != p:
        raise ShapeError(f"EnsembleLinear expects (*, {p}) input, got {z.shape}")
    rows = z.shape[0]
    if rows % K != 0:
        raise ContractError(f"{rows} rows cannot be grouped into {K} ensemble members")
    n = rows // K

    if layer.r is not None:
        z = (z.reshape(n, K, p) * layer.r).reshape(rows, p)
    out = z @ layer.weight
    if layer.s is None and layer.b is None:
        return out
    grouped = out.reshape(n, K, q)
    if layer.s is not None:
        grouped = grouped * layer.s
    if layer.b is not None:
        grouped = grouped + layer.b
    return grouped.reshape(rows, q)


def _orthonormal_rows(rng: Rng, rows: int, width: int) -> np.ndarray:
    gaussian = rng.standard_normal((width, rows))
    q, r = np.linalg.qr(gaussian)
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return (q * signs).T


def init_adapters(layer: EnsembleLinear, scheme: str, rng: Rng, strict: bool = True) -> None:
    """
    Initialize R and S in place and reset B to zero.

    random_sign: every entry of R and S is +1 or -1 with probability 1/2.
    orthogonal: R (K x p) and S (K x q) get orthonormal rows via QR of a
    Gaussian draw.

    Args:
        layer: layer whose adapter stacks are overwritten
        scheme: "random_sign" or "orthogonal"
        rng: stream the draws come from
        strict: when False, stacks narrower than K get random signs instead
            of raising OrthogonalityError
    """
    if scheme not in INIT_SCHEMES:
        raise ParameterError(f"unknown init scheme {scheme!r}; expected one of {INIT_SCHEMES}")
    K = layer.ensemble_size
    if K < 1:
        raise ParameterError(f"ensemble size must be >= 1, got {K}")

    if scheme == "orthogonal" and strict:
        for name in ("R", "S"):
            stack = layer.adapter_stacks().get(name)
            if stack is not None and not layer.orthogonal_feasible(name):
                raise OrthogonalityError(
                    f"cannot give {K} members orthonormal {name} rows of width {stack.shape[1]}"
                )

    for name in ("R", "S"):
        stack = layer.adapter_stacks().get(name)
        if stack is None:
            continue
        if scheme == "orthogonal" and layer.orthogonal_feasible(name):
            stack.values[...] = _orthonormal_rows(rng, K, stack.shape[1])
        else:
            if scheme == "orthogonal":
                logger.warning(
                    f"{name} stack of width {stack.shape[1]} is narrower than {K} members, using random signs"
                )
            stack.values[...] = rng.random_sign(stack.shape)
    if layer.b is not None:
        layer.b.values[...] = 0.0
    layer.init_scheme = scheme


def orthogonality_penalty(stack: Tensor, strength: float) -> Tensor:
    """strength * ||A A^T - I||_F^2 for a K x p adapter stack"""
    if strength < 0:
        raise ParameterError(f"penalty strength must be >= 0, got {strength}")
    if strength == 0:
        return as_tensor(0.0)
    gram = stack @ stack.T
    residual = gram - np.eye(stack.shape[0])
    return mul(strength, square(residual).sum())


@dataclass
class DropoutSpec:
    """Inverted dropout settings"""

    # Probability of zeroing an activation
    rate: float = 0.1

    # Stochastic masking on (training, or MC sampling at inference)
    active: bool = True

    def __post_init__(self):
        if not 0.0 <= self.rate < 1.0:
            raise ParameterError(f"dropout rate must lie in [0, 1), got {self.rate}")


def dropout_mask(shape: Tuple[int, ...], spec: DropoutSpec, rng: Optional[Rng]) -> Optional[np.ndarray]:
    """Scaled keep-mask (0 or 1/(1 - rate)), or None when dropout is off"""
    if not 0.0 <= spec.rate < 1.0:
        raise ParameterError(f"dropout rate must lie in [0, 1), got {spec.rate}")
    if not spec.active or spec.rate == 0.0:
        return None
    if rng is None:
        raise ContractError("active dropout needs a random stream")
    keep = rng.random(shape) >= spec.rate
    return keep / (1.0 - spec.rate)


def dropout(x: Tensor, spec: DropoutSpec, rng: Optional[Rng], mask: Optional[np.ndarray] = None) -> Tensor:
    """
    Zero activations with probability `rate` and rescale survivors by 1/(1 - rate).

    A given `mask` is applied as is, so one draw can be reused across steps.
    """
    if mask is None:
        mask = dropout_mask(x.shape, spec, rng)
        if mask is None:
            return x
    elif mask.shape != x.shape:
        raise ShapeError(f"dropout mask {mask.shape} does not match activations {x.shape}")
    return x * mask
