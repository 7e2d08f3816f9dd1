"""
Finite-difference gradient oracle used to check the reverse sweep.
"""

from __future__ import annotations

from typing import Callable, Union

import numpy as np

from errors import ParameterError
from numcore.tensor import Tensor, no_grad

ScalarFn = Callable[[Tensor], Union[Tensor, float]]


def _evaluate(f: ScalarFn, values: np.ndarray) -> float:
    out = f(Tensor(values))
    if isinstance(out, Tensor):
        return out.item()
    return float(out)


def finite_diff_grad(f: ScalarFn, x: Tensor, h: float = 1e-5) -> Tensor:
    """
    Central differences (f(x + h e_i) - f(x - h e_i)) / 2h for every coordinate.

    Args:
        f: deterministic scalar-valued function of a Tensor
        x: point to differentiate at
        h: step size (> 0)

    Returns:
        Tensor shaped like x holding the numerical gradient
    """
    if h <= 0:
        raise ParameterError(f"step size must be positive, got {h}")
    base = np.array(x.values if isinstance(x, Tensor) else x, dtype=np.float64)
    grad = np.zeros_like(base)
    flat = base.reshape(-1)
    out = grad.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + h
            upper = _evaluate(f, base)
            flat[i] = original - h
            lower = _evaluate(f, base)
            flat[i] = original
            out[i] = (upper - lower) / (2.0 * h)
    return Tensor(grad)


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """||a - n|| / max(||a||, ||n||), zero when both vanish"""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(analytic - numeric) / scale)
