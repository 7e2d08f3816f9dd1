"""
Multi-step probabilistic forecasts by ancestral sampling.

Every member rolls out S sample paths; each path feeds its own sampled value
mu + sigma * eps back as the next input. The K*S paths are pooled per step.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from scipy.stats import norm

from base_model import BaseModel
from errors import ConfigError, ContractError, ParameterError
from numcore import Rng, no_grad

logger = logging.getLogger(__name__)


@dataclass
class ForecastConfig:
    """Sampling settings for ancestral forecasting"""

    horizon: int = 5

    # Paths over all members together; each member gets total_paths / K
    total_paths: int = 2000

    context: int = 12

    # Multiplier on the sampled noise (0 = deterministic mean rollout)
    noise_scale: float = 1.0

    # Central interval coverages written to forecast CSVs
    coverages: List[float] = field(default_factory=lambda: [0.5, 0.8, 0.95])

    def __post_init__(self):
        if self.horizon < 1:
            raise ParameterError(f"horizon must be >= 1, got {self.horizon}")
        if self.total_paths < 1:
            raise ConfigError("total_paths must be at least 1")
        if self.context < 1:
            raise ConfigError("context must be at least 1")
        if self.noise_scale < 0:
            raise ConfigError("noise_scale must be non-negative")
        if any(not 0.0 < c < 1.0 for c in self.coverages):
            raise ConfigError("coverages must lie in (0, 1)")

    def paths_per_member(self, members: int) -> int:
        """S such that K*S == total_paths"""
        if self.total_paths % members != 0:
            raise ConfigError(f"{self.total_paths} paths cannot be split evenly over {members} members")
        return self.total_paths // members


@dataclass
class ForecastResult:
    """
    Pooled per-step forecast moments.

    Arrays have shape (H,) for one context window or (n, H) for n windows.
    `within_member + between_member == variance` by the law of total variance.
    """

    mean: np.ndarray
    variance: np.ndarray
    within_member: np.ndarray
    between_member: np.ndarray
    paths: Optional[np.ndarray] = None

    @property
    def horizon(self) -> int:
        return self.mean.shape[-1]

    def interval(self, coverage: float):
        """Central Gaussian interval bounds at the given coverage"""
        z = norm.ppf(0.5 + coverage / 2.0)
        half = z * np.sqrt(self.variance)
        return self.mean - half, self.mean + half

    def to_frame(self, coverages: Sequence[float] = (0.5, 0.8, 0.95)) -> pd.DataFrame:
        mean = np.atleast_2d(self.mean)
        variance = np.atleast_2d(self.variance)
        windows, horizon = mean.shape
        frame = pd.DataFrame(
            {
                "window": np.repeat(np.arange(windows), horizon),
                "step": np.tile(np.arange(1, horizon + 1), windows),
                "mean": mean.reshape(-1),
                "variance": variance.reshape(-1),
            }
        )
        for coverage in coverages:
            lower, upper = self.interval(coverage)
            label = f"{coverage * 100:g}"
            frame[f"lower_{label}"] = np.atleast_2d(lower).reshape(-1)
            frame[f"upper_{label}"] = np.atleast_2d(upper).reshape(-1)
        if windows == 1 and self.mean.ndim == 1:
            frame = frame.drop(columns="window")
        return frame


def ancestral_paths(model: BaseModel, context, cfg: ForecastConfig, rng: Rng) -> np.ndarray:
    """
    Sample forecast paths for every member.

    Args:
        model: trained time-series model
        context: (L,) window, or (n, L) windows
        cfg: horizon, path budget and noise scale
        rng: stream for the path noise

    Returns:
        paths shaped (K, S, H), or (n, K, S, H) for several windows
    """
    if cfg.horizon < 1:
        raise ParameterError(f"horizon must be >= 1, got {cfg.horizon}")
    context = np.asarray(context, dtype=np.float64)
    single = context.ndim == 1
    windows = context.reshape(1, -1) if single else context
    if windows.ndim != 2 or windows.shape[1] < 1:
        raise ContractError(f"expected (L,) or (n, L) context, got {context.shape}")

    K = model.members
    S = cfg.paths_per_member(K)
    n = windows.shape[0]
    batch = np.repeat(windows, S, axis=0)
    with no_grad():
        out = model.rollout(batch, cfg.horizon, rng, feedback="sample", noise_scale=cfg.noise_scale)
    # rows are (i*S + s)*K + k
    values = out.path_values().reshape(n, S, K, cfg.horizon)
    paths = np.ascontiguousarray(values.transpose(0, 2, 1, 3))
    return paths[0] if single else paths


def aggregate_forecast(paths: np.ndarray, keep_paths: bool = False) -> ForecastResult:
    """
    Pool (..., K, S, H) paths into per-step mean and population variance.

    Args:
        paths: sample paths from `ancestral_paths`
        keep_paths: attach the raw paths to the result

    Returns:
        ForecastResult with the within/between-member split of the variance
    """
    paths = np.asarray(paths, dtype=np.float64)
    if paths.ndim < 3 or paths.size == 0:
        raise ContractError(f"expected non-empty (..., K, S, H) paths, got {paths.shape}")
    flat = paths.reshape(paths.shape[:-3] + (-1, paths.shape[-1]))
    mean = flat.mean(axis=-2)
    variance = flat.var(axis=-2)
    member_means = paths.mean(axis=-2)
    within = paths.var(axis=-2).mean(axis=-2)
    between = member_means.var(axis=-2)
    return ForecastResult(
        mean=mean,
        variance=variance,
        within_member=within,
        between_member=between,
        paths=paths if keep_paths else None,
    )


def forecast_windows(
    model: BaseModel,
    contexts,
    cfg: ForecastConfig,
    rng: Rng,
    chunk_size: int = 32,
) -> ForecastResult:
    """
    Forecast many (n, L) windows, sampling at most `chunk_size` windows at a time.

    Chunk j draws its noise from `rng.stream(f"chunk_{j}")`.
    """
    contexts = np.atleast_2d(np.asarray(contexts, dtype=np.float64))
    if chunk_size < 1:
        raise ParameterError(f"chunk size must be >= 1, got {chunk_size}")
    parts = []
    for j, start in enumerate(range(0, contexts.shape[0], chunk_size)):
        paths = ancestral_paths(model, contexts[start : start + chunk_size], cfg, rng.stream(f"chunk_{j}"))
        parts.append(aggregate_forecast(paths))
    return ForecastResult(
        mean=np.concatenate([p.mean for p in parts]),
        variance=np.concatenate([p.variance for p in parts]),
        within_member=np.concatenate([p.within_member for p in parts]),
        between_member=np.concatenate([p.between_member for p in parts]),
    )


def write_forecast_csv(result: ForecastResult, path: Union[str, Path], coverages: Sequence[float]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    result.to_frame(coverages).to_csv(path, index=False)
    logger.info(f"Forecast written to {path}")
    return path
