import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np

from errors import ContractError, ParameterError, StateError
from losses import (
    LossValue,
    aggregate_categorical,
    aggregate_gaussian,
    categorical_nll,
    ensemble_loss,
    gaussian_nll,
)
from model_config import ModelConfig
from numcore import Rng, Tensor, as_tensor, concat, no_grad

logger = logging.getLogger(__name__)

FeedCallback = Callable[[int, str], None]


@dataclass
class HeadOutput:
    """
    Raw head outputs for every member.

    Rows are grouped so row (i*members + k) is member k's output for sample i.
    Regression/series heads fill `mean` and `log_var` (shape (rows,));
    classification fills `probs` (shape (rows, C)).
    """

    members: int
    mean: Optional[Tensor] = None
    log_var: Optional[Tensor] = None
    probs: Optional[Tensor] = None

    @property
    def rows(self) -> int:
        first = self.probs if self.probs is not None else self.mean
        return first.shape[0]

    def member_slice(self, k: int) -> "HeadOutput":
        """Outputs of member k only"""
        rows = slice(k, None, self.members)
        return HeadOutput(
            members=1,
            mean=None if self.mean is None else self.mean[rows],
            log_var=None if self.log_var is None else self.log_var[rows],
            probs=None if self.probs is None else self.probs[rows],
        )

    def by_member(self, name: str) -> np.ndarray:
        """(K, n, ...) numpy view of one output"""
        values = getattr(self, name).values
        n = values.shape[0] // self.members
        return np.swapaxes(values.reshape((n, self.members) + values.shape[1:]), 0, 1)


@dataclass
class RolloutOutput:
    """Per-step head outputs and fed-back values of an autoregressive rollout"""

    members: int
    means: List[Tensor] = field(default_factory=list)
    log_vars: List[Tensor] = field(default_factory=list)
    # Value produced at each step (the mean or a sampled path value)
    fed: List[np.ndarray] = field(default_factory=list)

    @property
    def horizon(self) -> int:
        return len(self.means)

    def path_values(self) -> np.ndarray:
        """(rows, H) matrix of the produced values"""
        return np.stack(self.fed, axis=1)


@dataclass
class PredictiveDistribution:
    """Per-member predictions and their ensemble aggregate"""

    task: str
    member_mean: Optional[np.ndarray] = None
    member_var: Optional[np.ndarray] = None
    mean: Optional[np.ndarray] = None
    var: Optional[np.ndarray] = None
    member_probs: Optional[np.ndarray] = None
    probs: Optional[np.ndarray] = None

    @property
    def members(self) -> int:
        first = self.member_probs if self.member_probs is not None else self.member_mean
        return first.shape[0]

    @classmethod
    def from_heads(cls, task: str, out: HeadOutput) -> "PredictiveDistribution":
        if out.probs is not None:
            member_probs = out.by_member("probs")
            return cls(task=task, member_probs=member_probs, probs=aggregate_categorical(member_probs))
        member_mean = out.by_member("mean")
        member_var = np.exp(out.by_member("log_var"))
        mean, var = aggregate_gaussian(member_mean, member_var)
        return cls(task=task, member_mean=member_mean, member_var=member_var, mean=mean, var=var)


def interleave_members(parts: List[Tensor]) -> Tensor:
    """Merge K per-member (n, ...) tensors into member-grouped (n*K, ...) rows"""
    n = parts[0].shape[0]
    rest = parts[0].shape[1:]
    stacked = concat([p.reshape((n, 1) + rest) for p in parts], axis=1)
    return stacked.reshape((n * len(parts),) + rest)


class BaseModel(ABC):
    """Abstract base class for every predictor"""

    def __init__(self, config: ModelConfig):
        """
        Args:
            config: validated architecture
        """
        self.config = config
        self.is_built = False

    def log(self, message: str):
        """
        Log a message with the model name prefix.

        Args:
            message: The message to log
        """
        logger.info(f"{self.name} - {message}")

    @property
    @abstractmethod
    def name(self) -> str:
        """Return the display name of the method"""
        pass

    @property
    @abstractmethod
    def members(self) -> int:
        """Number of predictive members at inference"""
        pass

    @abstractmethod
    def forward(self, x, rng: Optional[Rng] = None, training: bool = False) -> HeadOutput:
        """
        Run the network on tabular inputs.

        Args:
            x: (n, p) inputs
            rng: stream for dropout masks
            training: training mode (MC dropout uses one pass)

        Returns:
            HeadOutput with member-grouped rows
        """
        pass

    @abstractmethod
    def rollout(
        self,
        context,
        horizon: int,
        rng: Optional[Rng] = None,
        feedback: str = "mean",
        noise_scale: float = 1.0,
        on_feed: Optional[FeedCallback] = None,
        training: bool = False,
    ) -> RolloutOutput:
        """
        Encode a context window and predict `horizon` steps autoregressively.

        Args:
            context: (n, L) windows of a univariate series
            horizon: number of predicted steps
            rng: stream for sampled feedback and dropout masks
            feedback: "mean" feeds mu back, "sample" feeds mu + sigma * eps
            noise_scale: multiplier on eps for sampled feedback
            on_feed: called with (step, source) every time a value is fed back
            training: training mode

        Returns:
            RolloutOutput with member-grouped rows
        """
        pass

    @abstractmethod
    def named_parameters(self) -> Dict[str, Tensor]:
        pass

    def training_units(self) -> List["BaseModel"]:
        """Models the trainer optimizes separately (one unless members are independent)"""
        return [self]

    def penalty(self) -> Optional[Tensor]:
        return None

    @property
    def param_count(self) -> int:
        return sum(p.size for p in self.named_parameters().values())

    def zero_grad(self) -> None:
        for param in self.named_parameters().values():
            param.zero_grad()

    def _require_built(self) -> None:
        if not self.is_built:
            raise StateError(f"{self.name} has not been built")

    # ------------------------------------------------------------------
    # Losses
    # ------------------------------------------------------------------

    def loss(self, x, y, rng: Optional[Rng] = None) -> LossValue:
        """Average per-member NLL on a tabular batch plus penalties"""
        self._require_built()
        out = self.forward(x, rng, training=True)
        y = np.asarray(y)
        member_losses = []
        for k in range(out.members):
            member = out.member_slice(k)
            if member.probs is not None:
                member_losses.append(categorical_nll(member.probs, y))
            else:
                member_losses.append(gaussian_nll(member.mean, member.log_var, y))
        penalty = self.penalty()
        return ensemble_loss(member_losses, [] if penalty is None else [penalty])

    def sequence_loss(self, context, targets, rng: Optional[Rng] = None, on_feed: Optional[FeedCallback] = None) -> LossValue:
        """Multi-step NLL averaged over the horizon under mean feedback"""
        self._require_built()
        targets = np.asarray(targets, dtype=np.float64)
        if targets.ndim != 2:
            raise ContractError(f"targets must be (n, H), got {targets.shape}")
        out = self.rollout(context, targets.shape[1], rng, feedback="mean", on_feed=on_feed, training=True)
        member_losses = []
        for k in range(out.members):
            rows = slice(k, None, out.members)
            steps = [
                gaussian_nll(mean[rows], log_var[rows], targets[:, h]).value
                for h, (mean, log_var) in enumerate(zip(out.means, out.log_vars))
            ]
            total = steps[0]
            for term in steps[1:]:
                total = total + term
            member_losses.append(LossValue(total / float(len(steps))))
        penalty = self.penalty()
        return ensemble_loss(member_losses, [] if penalty is None else [penalty])

    # ------------------------------------------------------------------
    # Inference
    # ------------------------------------------------------------------

    def predict(self, x, rng: Optional[Rng] = None) -> PredictiveDistribution:
        """
        Predict every member on tabular inputs and aggregate.

        Args:
            x: (n, p) inputs
            rng: stream for MC dropout masks

        Returns:
            PredictiveDistribution with per-member arrays shaped (K, n, ...)
        """
        self._require_built()
        with no_grad():
            out = self.forward(as_tensor(x), rng, training=False)
        return PredictiveDistribution.from_heads(self.config.task, out)

    @staticmethod
    def _check_rollout_args(horizon: int, feedback: str) -> None:
        if horizon < 1:
            raise ParameterError(f"horizon must be >= 1, got {horizon}")
        if feedback not in ("mean", "sample"):
            raise ParameterError(f"feedback must be 'mean' or 'sample', got {feedback!r}")
