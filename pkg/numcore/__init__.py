from numcore.tensor import (
    Tensor,
    add,
    as_tensor,
    backward,
    clip,
    concat,
    exp,
    getitem,
    is_grad_enabled,
    log,
    matmul,
    mul,
    no_grad,
    relu,
    repeat,
    reshape,
    sigmoid,
    softmax,
    square,
    sub,
    tanh,
    tensor_mean,
    tensor_sum,
)
from numcore.rng import Rng
from numcore.gradcheck import finite_diff_grad, relative_error

__all__ = [
    "Tensor",
    "Rng",
    "add",
    "as_tensor",
    "backward",
    "clip",
    "concat",
    "exp",
    "finite_diff_grad",
    "getitem",
    "is_grad_enabled",
    "log",
    "matmul",
    "mul",
    "no_grad",
    "relative_error",
    "relu",
    "repeat",
    "reshape",
    "sigmoid",
    "softmax",
    "square",
    "sub",
    "tanh",
    "tensor_mean",
    "tensor_sum",
]
