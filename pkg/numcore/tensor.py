"""
Dense float64 tensors with reverse-mode differentiation.

Every operation on tensors that require gradients records its parents and a
vector-Jacobian closure. `backward(loss)` orders the recorded graph
topologically (the tape) and sweeps it once in reverse.

Accumulation: `backward` ADDS d(loss)/d(t) into `t.grad` for every tensor on
the tape. Calling it twice without `zero_grad()` doubles the stored gradient.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Iterable, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit

from errors import ContractError, ShapeError

ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence]
BackwardFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]

_grad_state = threading.local()


def is_grad_enabled() -> bool:
    """Return True when new operations are recorded on the tape (per thread)"""
    return getattr(_grad_state, "enabled", True)


@contextmanager
def no_grad():
    """Disable graph recording in the current thread (inference mode)"""
    previous = is_grad_enabled()
    _grad_state.enabled = False
    try:
        yield
    finally:
        _grad_state.enabled = previous


class Tensor:
    """
    Row-major float64 array with optional gradient buffer.

    `grad` is present iff `requires_grad`; it is allocated lazily with the
    same shape as `values`.
    """

    __array_ufunc__ = None

    def __init__(
        self,
        values: ArrayLike,
        requires_grad: bool = False,
        *,
        _parents: Tuple["Tensor", ...] = (),
        _backward: Optional[BackwardFn] = None,
        _copy: bool = True,
    ):
        if isinstance(values, Tensor):
            values = values.values
        if _copy:
            # user-facing construction copies so leaves never alias caller arrays
            self.values = np.array(values, dtype=np.float64)
        else:
            self.values = np.asarray(values, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._backward = _backward
        self._grad: Optional[np.ndarray] = None

    # ------------------------------------------------------------------
    # Basic properties
    # ------------------------------------------------------------------

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    @property
    def size(self) -> int:
        return int(self.values.size)

    @property
    def grad(self) -> Optional[np.ndarray]:
        if not self.requires_grad:
            return None
        if self._grad is None:
            self._grad = np.zeros_like(self.values)
        return self._grad

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def zero_grad(self) -> None:
        if self.requires_grad:
            self._grad = np.zeros_like(self.values)

    def item(self) -> float:
        if self.values.size != 1:
            raise ContractError(f"item() needs a single element, got shape {self.shape}")
        return float(self.values.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.values.copy()

    def detach(self) -> "Tensor":
        return Tensor(self.values)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self) -> int:
        return self.shape[0]

    # ------------------------------------------------------------------
    # Operator sugar
    # ------------------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tensor_mean(self, axis=axis, keepdims=keepdims)


# ----------------------------------------------------------------------
# Graph construction helpers
# ----------------------------------------------------------------------


def as_tensor(value: ArrayLike) -> Tensor:
    """Wrap constants; tensors pass through untouched"""
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def _result(values: np.ndarray, parents: Tuple[Tensor, ...], backward: BackwardFn) -> Tensor:
    track = is_grad_enabled() and any(p.requires_grad for p in parents)
    if not track:
        return Tensor(values, _copy=False)
    return Tensor(values, requires_grad=True, _parents=parents, _backward=backward, _copy=False)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`"""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ----------------------------------------------------------------------
# Elementwise arithmetic
# ----------------------------------------------------------------------


def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(a.values + b.values, (a, b), backward)


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _result(a.values - b.values, (a, b), backward)


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return _unbroadcast(g * b.values, a.shape), _unbroadcast(g * a.values, b.shape)

    return _result(a.values * b.values, (a, b), backward)


def div(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return (
            _unbroadcast(g / b.values, a.shape),
            _unbroadcast(-g * a.values / (b.values * b.values), b.shape),
        )

    return _result(a.values / b.values, (a, b), backward)


def neg(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    return _result(-a.values, (a,), lambda g: (-g,))


def power(a: ArrayLike, exponent: float) -> Tensor:
    a = as_tensor(a)
    exponent = float(exponent)

    def backward(g):
        return (g * exponent * np.power(a.values, exponent - 1.0),)

    return _result(np.power(a.values, exponent), (a,), backward)


def square(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    return _result(a.values * a.values, (a,), lambda g: (2.0 * g * a.values,))


# ----------------------------------------------------------------------
# Nonlinearities
# ----------------------------------------------------------------------


def exp(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.values)
    return _result(out, (a,), lambda g: (g * out,))


def log(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    return _result(np.log(a.values), (a,), lambda g: (g / a.values,))


def tanh(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.values)
    return _result(out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    out = expit(a.values)
    return _result(out, (a,), lambda g: (g * out * (1.0 - out),))


def relu(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    mask = a.values > 0.0
    return _result(np.where(mask, a.values, 0.0), (a,), lambda g: (g * mask,))


def clip(a: ArrayLike, low: float, high: float) -> Tensor:
    """Clamp into [low, high]; gradient is zero where the clamp is active"""
    a = as_tensor(a)
    inside = (a.values >= low) & (a.values <= high)
    return _result(np.clip(a.values, low, high), (a,), lambda g: (g * inside,))


def softmax(a: ArrayLike, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.values - a.values.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _result(out, (a,), backward)


# ----------------------------------------------------------------------
# Linear algebra and reductions
# ----------------------------------------------------------------------


def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    """Matrix product of two 2-D tensors"""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def backward(g):
        return g @ b.values.T, a.values.T @ g

    return _result(a.values @ b.values, (a, b), backward)


def transpose(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    if a.ndim != 2:
        raise ShapeError(f"transpose expects a 2-D tensor, got {a.shape}")
    return _result(a.values.T, (a,), lambda g: (g.T,))


def tensor_sum(a: ArrayLike, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape),)

    return _result(a.values.sum(axis=axis, keepdims=keepdims), (a,), backward)


def tensor_mean(a: ArrayLike, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        count = a.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return tensor_sum(a, axis=axis, keepdims=keepdims) / float(count)


# ----------------------------------------------------------------------
# Shape manipulation
# ----------------------------------------------------------------------


def reshape(a: ArrayLike, shape: Tuple[int, ...]) -> Tensor:
    a = as_tensor(a)
    return _result(a.values.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def _is_basic_index(index) -> bool:
    parts = index if isinstance(index, tuple) else (index,)
    return all(isinstance(p, (slice, int, type(Ellipsis))) or p is None for p in parts)


def getitem(a: ArrayLike, index) -> Tensor:
    a = as_tensor(a)
    basic = _is_basic_index(index)

    def backward(g):
        full = np.zeros_like(a.values)
        if basic:
            # basic indexing never selects an element twice
            full[index] += g
        else:
            np.add.at(full, index, g)
        return (full,)

    return _result(a.values[index], (a,), backward)


def concat(tensors: Iterable[ArrayLike], axis: int = 0) -> Tensor:
    parts = tuple(as_tensor(t) for t in tensors)
    sizes = [p.shape[axis] for p in parts]
    cuts = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _result(np.concatenate([p.values for p in parts], axis=axis), parts, backward)


def repeat(a: ArrayLike, repeats: int, axis: int = 0) -> Tensor:
    """np.repeat along `axis`: element i becomes rows i*repeats .. i*repeats+repeats-1"""
    a = as_tensor(a)
    axis = axis % a.ndim

    def backward(g):
        grouped = g.reshape(a.shape[:axis] + (a.shape[axis], repeats) + a.shape[axis + 1:])
        return (grouped.sum(axis=axis + 1),)

    return _result(np.repeat(a.values, repeats, axis=axis), (a,), backward)


# ----------------------------------------------------------------------
# Reverse sweep
# ----------------------------------------------------------------------


def _tape(root: Tensor) -> list:
    """Topologically ordered nodes reachable from root (parents first)"""
    order: list = []
    visited: set = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """
    Accumulate d(loss)/d(t) into `t.grad` for every tensor on loss's tape.

    Args:
        loss: scalar tensor (shape ())

    Raises:
        ContractError: if loss is not a scalar
    """
    if not isinstance(loss, Tensor) or loss.ndim != 0:
        shape = loss.shape if isinstance(loss, Tensor) else type(loss).__name__
        raise ContractError(f"backward() needs a scalar loss, got {shape}")
    if not loss.requires_grad:
        return

    adjoints = {id(loss): np.ones((), dtype=np.float64)}
    for node in reversed(_tape(loss)):
        g = adjoints.pop(id(node), None)
        if g is None:
            continue
        node.grad[...] += g
        if node._backward is None:
            continue
        for parent, parent_grad in zip(node._parents, node._backward(g)):
            if parent_grad is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in adjoints:
                adjoints[key] = adjoints[key] + parent_grad
            else:
                adjoints[key] = parent_grad
