"""
Training likelihoods and predictive aggregation.

Training NLLs follow the reported-loss convention: the Gaussian loss omits
the 0.5*log(2*pi) constant. Evaluation NLLs with the constant live in
`metrics`.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from errors import ContractError, DataError, NumericalError, ShapeError
from numcore import Tensor, as_tensor, clip, exp, getitem, log, square

logger = logging.getLogger(__name__)

PROBABILITY_FLOOR = 1e-12


@dataclass
class LossValue:
    """Scalar loss on the tape plus an optional penalty component"""

    value: Tensor
    penalty: Optional[Tensor] = None

    def __post_init__(self):
        if not np.all(np.isfinite(self.value.values)):
            raise NumericalError(f"non-finite loss value {self.value.values}")
        if self.penalty is not None and not np.all(np.isfinite(self.penalty.values)):
            raise NumericalError(f"non-finite penalty value {self.penalty.values}")

    @property
    def total(self) -> Tensor:
        if self.penalty is None:
            return self.value
        return self.value + self.penalty

    def item(self) -> float:
        return self.total.item()

    @property
    def penalty_item(self) -> float:
        return 0.0 if self.penalty is None else self.penalty.item()


def _check_finite(name: str, t: Tensor) -> None:
    if not np.all(np.isfinite(t.values)):
        bad = int(np.size(t.values) - np.isfinite(t.values).sum())
        raise NumericalError(f"{name} holds {bad} non-finite entries")


def gaussian_nll(mean: Tensor, log_var: Tensor, y) -> LossValue:
    """
    Mean of 0.5*log_var + (y - mean)^2 / (2*exp(log_var)) over all elements.

    Args:
        mean: predicted means
        log_var: predicted log-variances, same shape as mean
        y: targets, same shape as mean

    Returns:
        LossValue attached to the tape
    """
    mean, log_var, y = as_tensor(mean), as_tensor(log_var), as_tensor(y)
    if mean.shape != log_var.shape or mean.shape != y.shape:
        raise ShapeError(
            f"gaussian_nll shapes disagree: mean {mean.shape}, log_var {log_var.shape}, y {y.shape}"
        )
    for name, t in (("mean", mean), ("log_var", log_var), ("y", y)):
        _check_finite(name, t)
    terms = 0.5 * log_var + square(y - mean) / (2.0 * exp(log_var))
    return LossValue(terms.mean())


def _check_labels(labels: np.ndarray, num_classes: int, rows: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.shape[0] != rows:
        raise ShapeError(f"expected {rows} labels, got shape {labels.shape}")
    if not np.all(np.equal(np.mod(labels, 1), 0)):
        raise DataError("class labels must be integers")
    labels = labels.astype(np.int64)
    invalid = np.flatnonzero((labels < 0) | (labels >= num_classes))
    if invalid.size:
        raise DataError(
            f"labels outside 0..{num_classes - 1} at rows {invalid[:10].tolist()}"
        )
    return labels


def categorical_nll(probs: Tensor, labels) -> LossValue:
    """Mean of -log p(true class), probabilities floored at 1e-12"""
    probs = as_tensor(probs)
    if probs.ndim != 2:
        raise ShapeError(f"expected (n, C) probabilities, got {probs.shape}")
    labels = _check_labels(labels, probs.shape[1], probs.shape[0])
    _check_finite("probs", probs)
    picked = getitem(probs, (np.arange(probs.shape[0]), labels))
    return LossValue(-log(clip(picked, PROBABILITY_FLOOR, 1.0)).mean())


def ensemble_loss(member_losses: Sequence[LossValue], penalties: Sequence[Tensor] = ()) -> LossValue:
    """
    Average per-member loss plus the sum of penalty terms.

    A single backward pass over the result sends every member's contribution
    to shared weights and each member's own contribution to its adapters.
    """
    if len(member_losses) == 0:
        raise ContractError("ensemble_loss needs at least one member loss")
    total = member_losses[0].value
    for member in member_losses[1:]:
        total = total + member.value
    value = total / float(len(member_losses))

    penalty = None
    for term in list(penalties) + [m.penalty for m in member_losses if m.penalty is not None]:
        penalty = term if penalty is None else penalty + term
    return LossValue(value, penalty)


def aggregate_gaussian(member_means: np.ndarray, member_vars: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Moment-match the equally weighted Gaussian mixture.

    Args:
        member_means: (K, ...) member means
        member_vars: (K, ...) member variances

    Returns:
        (mu*, var*) with var* = mean(var_k) + mean((mu_k - mu*)^2)
    """
    member_means = np.asarray(member_means, dtype=np.float64)
    member_vars = np.asarray(member_vars, dtype=np.float64)
    if member_means.shape != member_vars.shape:
        raise ShapeError(f"means {member_means.shape} and variances {member_vars.shape} disagree")
    mean = member_means.mean(axis=0)
    var = member_vars.mean(axis=0) + np.square(member_means - mean).mean(axis=0)
    return mean, var


def aggregate_categorical(member_probs: np.ndarray) -> np.ndarray:
    """Average (K, n, C) member probability rows"""
    return np.asarray(member_probs, dtype=np.float64).mean(axis=0)
