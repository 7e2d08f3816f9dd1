from typing import Dict, Optional

import numpy as np

from base_model import BaseModel, FeedCallback, HeadOutput, RolloutOutput
from errors import ContractError, ShapeError
from layers import replicate_members
from model_config import ModelConfig
from models.network import Network
from numcore import Rng, Tensor, as_tensor


class SingleModel(BaseModel):
    """One deterministic network; the baseline every ensemble is compared to"""

    def __init__(self, config: ModelConfig, rng: Rng):
        super().__init__(config)
        self.network = self._build_network(rng)
        self.is_built = True

    def _build_network(self, rng: Rng) -> Network:
        return Network(self.config, rng)

    @property
    def name(self) -> str:
        return "Single"

    @property
    def members(self) -> int:
        return 1

    def members_for(self, training: bool) -> int:
        """Rows per sample fed through the network"""
        return self.members

    def named_parameters(self) -> Dict[str, Tensor]:
        return self.network.named_parameters()

    def forward(self, x, rng: Optional[Rng] = None, training: bool = False) -> HeadOutput:
        self._require_built()
        members = self.members_for(training)
        x = as_tensor(x)
        if members > 1:
            x = replicate_members(x, members)
        return self.network.forward(x, members, rng)

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
        self._require_built()
        self._check_rollout_args(horizon, feedback)
        if self.network.recurrent is None:
            raise ContractError(f"{self.name} has no recurrent layer to roll out")
        if feedback == "sample" and rng is None:
            raise ContractError("sampled feedback needs a random stream")
        context = as_tensor(context)
        if context.ndim == 3:
            context = context.reshape(context.shape[0], context.shape[1])
        if context.ndim != 2:
            raise ShapeError(f"expected (n, L) context windows, got {context.shape}")

        members = self.members_for(training)
        n, length = context.shape
        x_seq = context.reshape(n, length, 1)
        if members > 1:
            x_seq = replicate_members(x_seq, members)
        rows = n * members

        h = self.network.encode(x_seq)
        # one mask per row for the whole horizon: each row stays one network
        masks = self.network.rollout_masks(rows, rng)
        out = RolloutOutput(members=members)
        for step in range(horizon):
            heads = self.network.emit(h, members, rng, masks)
            out.means.append(heads.mean)
            out.log_vars.append(heads.log_var)
            if feedback == "mean":
                produced = heads.mean
                source = "model_mean"
            else:
                eps = rng.standard_normal(rows) * noise_scale
                sigma = np.exp(0.5 * heads.log_var.values)
                produced = Tensor(heads.mean.values + sigma * eps)
                source = "model_sample"
            out.fed.append(produced.numpy())
            if step + 1 == horizon:
                break
            if on_feed is not None:
                on_feed(step + 1, source)
            h = self.network.advance(produced.reshape(rows, 1), h)
        return out
