"""
Adam and the training loop.

Tabular models train on shuffled mini-batches. Time-series models unroll the
context window and then predict `horizon` steps autoregressively, feeding
their own predicted mean back in (no teacher forcing); the objective is the
multi-step NLL averaged over the horizon.
"""

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from base_model import BaseModel
from errors import ConfigError, ContractError, NumericalError
from numcore import Rng, Tensor, backward

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    """Optimization settings shared by every method"""

    epochs: int = 500
    learning_rate: float = 0.005
    batch_size: int = 64
    weight_decay: float = 0.0

    # One full training run per seed
    seeds: List[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])

    # Adam moment decay rates and denominator floor
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    # Time series: context window L and training horizon H
    context: int = 12
    horizon: int = 5

    # Deep-ensemble members trained concurrently
    workers: int = 1

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("Epochs must be at least 1")
        if self.learning_rate < 0:
            raise ConfigError("Learning rate must be non-negative")
        if self.batch_size < 1:
            raise ConfigError("Batch size must be at least 1")
        if self.weight_decay < 0:
            raise ConfigError("Weight decay must be non-negative")
        if not self.seeds:
            raise ConfigError("At least one seed is required")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigError("Adam betas must lie in [0, 1)")
        if self.eps <= 0:
            raise ConfigError("Adam eps must be positive")
        if self.context < 1 or self.horizon < 1:
            raise ConfigError("Context and horizon must be at least 1")
        if self.workers < 1:
            raise ConfigError("Workers must be at least 1")


@dataclass
class AdamState:
    """First/second moment buffers keyed by parameter name"""

    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adam_step(
    params: Dict[str, Tensor],
    grads: Dict[str, np.ndarray],
    state: AdamState,
    cfg: TrainConfig,
) -> None:
    """
    Bias-corrected Adam update, applied in place.

    Args:
        params: parameters to update
        grads: gradients keyed like params
        state: moment buffers, advanced by one step
        cfg: learning rate, betas, eps and weight decay
    """
    for name, param in params.items():
        if name not in grads:
            raise ContractError(f"no gradient for parameter {name}")
        if grads[name].shape != param.shape:
            raise ContractError(
                f"gradient for {name} has shape {grads[name].shape}, parameter has {param.shape}"
            )

    state.step += 1
    bc1 = 1.0 - cfg.beta1**state.step
    bc2 = 1.0 - cfg.beta2**state.step
    step_size = cfg.learning_rate / bc1

    for name, param in params.items():
        g = grads[name]
        if cfg.weight_decay:
            g = g + cfg.weight_decay * param.values
        if name not in state.m:
            state.m[name] = np.zeros_like(param.values)
            state.v[name] = np.zeros_like(param.values)
        m, v = state.m[name], state.v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * (g * g)
        param.values -= step_size * m / (np.sqrt(v / bc2) + cfg.eps)


@dataclass
class TrainResult:
    """Trained model, per-epoch losses and wall-clock time"""

    model: BaseModel
    loss_trace: pd.DataFrame
    elapsed_seconds: float

    def epoch_trace(self) -> pd.DataFrame:
        """Loss and penalty per epoch, averaged over independently trained units"""
        return (
            self.loss_trace.groupby("epoch", as_index=False)[["loss", "penalty"]]
            .mean()
            .sort_values("epoch")
            .reset_index(drop=True)
        )


class Trainer:
    """Trains models under one TrainConfig"""

    def __init__(self, config: TrainConfig):
        """
        Args:
            config: optimization settings
        """
        self.config = config

    def log(self, message: str):
        logger.info(f"Trainer - {message}")

    def train(self, model: BaseModel, dataset, rng: Rng) -> TrainResult:
        """
        Train every unit of `model` on `dataset`.

        Deep ensembles train their members independently (optionally in
        parallel); every other method is one unit.

        Args:
            model: built model
            dataset: TabularDataset or SeriesDataset
            rng: stream for shuffling, dropout and unit seeding

        Returns:
            TrainResult with the loss trace (unit, epoch, loss, penalty)
        """
        units = model.training_units()
        batches = self._batch_source(model, dataset)
        start = time.perf_counter()

        if self.config.workers > 1 and len(units) > 1:
            with ThreadPoolExecutor(max_workers=min(self.config.workers, len(units))) as executor:
                futures = [
                    executor.submit(self._train_unit, unit, batches, rng.stream(f"unit_{i}"), i)
                    for i, unit in enumerate(units)
                ]
                traces = [future.result() for future in futures]
        else:
            traces = [
                self._train_unit(unit, batches, rng.stream(f"unit_{i}"), i) for i, unit in enumerate(units)
            ]

        elapsed = time.perf_counter() - start
        trace = pd.concat(traces, ignore_index=True)
        self.log(f"{model.name} trained {len(units)} unit(s) in {elapsed:.1f}s")
        return TrainResult(model=model, loss_trace=trace, elapsed_seconds=elapsed)

    def _batch_source(self, model: BaseModel, dataset) -> Tuple[np.ndarray, np.ndarray, Callable]:
        if model.config.task == "timeseries":
            contexts, targets = dataset.train_windows()
            return contexts, targets, lambda unit, x, y, rng: unit.sequence_loss(x, y, rng)
        return dataset.x_train, dataset.y_train, lambda unit, x, y, rng: unit.loss(x, y, rng)

    def _train_unit(self, unit: BaseModel, batches, rng: Rng, index: int) -> pd.DataFrame:
        x_all, y_all, loss_fn = batches
        n = x_all.shape[0]
        if n == 0:
            raise ContractError("training data is empty")
        shuffle_rng = rng.stream("shuffle")
        noise_rng = rng.stream("dropout")
        params = unit.named_parameters()
        state = AdamState()
        rows = []

        for epoch in range(1, self.config.epochs + 1):
            order = shuffle_rng.permutation(n)
            loss_sum = 0.0
            penalty_sum = 0.0
            for batch_index, start in enumerate(range(0, n, self.config.batch_size)):
                idx = order[start : start + self.config.batch_size]
                unit.zero_grad()
                try:
                    loss = loss_fn(unit, x_all[idx], y_all[idx], noise_rng)
                except NumericalError as exc:
                    raise NumericalError(
                        f"{unit.name} - epoch {epoch}, batch {batch_index}: {exc}"
                    ) from exc
                total = loss.total
                if not np.isfinite(total.item()):
                    raise NumericalError(
                        f"{unit.name} - non-finite loss at epoch {epoch}, batch {batch_index}"
                    )
                backward(total)
                adam_step(params, {name: p.grad for name, p in params.items()}, state, self.config)
                loss_sum += loss.value.item() * len(idx)
                penalty_sum += loss.penalty_item * len(idx)
            rows.append(
                {"unit": index, "epoch": epoch, "loss": loss_sum / n, "penalty": penalty_sum / n}
            )
            logger.debug(f"{unit.name} - unit {index} epoch {epoch}: loss {loss_sum / n:.5f}")
        return pd.DataFrame(rows, columns=["unit", "epoch", "loss", "penalty"])


def train(model: BaseModel, dataset, cfg: TrainConfig, rng: Rng) -> TrainResult:
    """Train `model` with a fresh Trainer"""
    return Trainer(cfg).train(model, dataset, rng)
