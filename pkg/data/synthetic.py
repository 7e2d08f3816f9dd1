"""
Synthetic benchmarks: heteroscedastic Ackley regression/classification and
AR(1) / random-walk series.
"""

import logging
from typing import Tuple

import numpy as np
import pandas as pd

from errors import ConfigError, ParameterError
from numcore import Rng

logger = logging.getLogger(__name__)

ACKLEY_A = 20.0
ACKLEY_B = 0.2
ACKLEY_C = 2.0 * np.pi


def ackley(x: np.ndarray, a: float = ACKLEY_A, b: float = ACKLEY_B, c: float = ACKLEY_C) -> np.ndarray:
    """Ackley function over the rows of x (n, d)"""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    d = x.shape[1]
    radius = np.sqrt(np.sum(x * x, axis=1) / d)
    return -a * np.exp(-b * radius) - np.exp(np.sum(np.cos(c * x), axis=1) / d) + a


def ackley_noise_scale(
    x: np.ndarray,
    sigma_min: float = 0.1,
    sigma_max: float = 1.0,
    bound: float = 2.0,
) -> np.ndarray:
    """Noise level growing linearly with the input radius, normalized by the cube's corner radius"""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    corner = bound * np.sqrt(x.shape[1])
    return sigma_min + (sigma_max - sigma_min) * np.linalg.norm(x, axis=1) / corner


def gen_ackley(
    n: int,
    rng: Rng,
    d: int = 10,
    task: str = "regression",
    bound: float = 2.0,
    sigma_min: float = 0.1,
    sigma_max: float = 1.0,
) -> pd.DataFrame:
    """
    Sample the Ackley benchmark on the cube [-bound, bound]^d.

    Regression targets are f(x) + sigma(x) * eps. Classification thresholds
    f(x) - median(f) + sigma(x) * eps at zero, so classes are balanced as the
    noise vanishes.

    Returns:
        DataFrame with columns x0..x{d-1} and y
    """
    if n < 1 or d < 1:
        raise ParameterError(f"need n >= 1 and d >= 1, got n={n}, d={d}")
    if task not in ("regression", "classification"):
        raise ConfigError(f"Ackley supports regression or classification, not {task!r}")
    x = rng.stream("inputs").uniform(-bound, bound, (n, d))
    f = ackley(x)
    noise = ackley_noise_scale(x, sigma_min, sigma_max, bound) * rng.stream("noise").standard_normal(n)
    if task == "regression":
        y = f + noise
    else:
        y = ((f - np.median(f) + noise) > 0).astype(np.int64)
    frame = pd.DataFrame(x, columns=[f"x{i}" for i in range(d)])
    frame["y"] = y
    return frame


def gen_ar1(n: int, rng: Rng, phi: float = 0.8, sigma: float = 1.0, c: float = 0.0) -> np.ndarray:
    """Stationary AR(1) x_t = c + phi * x_{t-1} + sigma * eps_t started from its stationary law"""
    if n < 1:
        raise ParameterError(f"series length must be >= 1, got {n}")
    if not -1.0 < phi < 1.0:
        raise ParameterError(f"|phi| must be < 1 for a stationary AR(1), got {phi}")
    eps = rng.standard_normal(n)
    values = np.empty(n)
    mean = c / (1.0 - phi)
    values[0] = mean + sigma / np.sqrt(1.0 - phi * phi) * eps[0]
    for t in range(1, n):
        values[t] = c + phi * values[t - 1] + sigma * eps[t]
    return values


def gen_random_walk(n: int, rng: Rng, sigma: float = 1.0, start: float = 0.0) -> np.ndarray:
    if n < 1:
        raise ParameterError(f"series length must be >= 1, got {n}")
    return start + np.cumsum(sigma * rng.standard_normal(n))


def series_frame(values: np.ndarray) -> pd.DataFrame:
    return pd.DataFrame({"t": np.arange(len(values)), "value": values})


def ackley_arrays(frame: pd.DataFrame) -> Tuple[np.ndarray, np.ndarray]:
    features = [c for c in frame.columns if c != "y"]
    return frame[features].to_numpy(dtype=np.float64), frame["y"].to_numpy()
