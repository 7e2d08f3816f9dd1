from dataclasses import replace
from typing import Dict, List, Optional

from base_model import BaseModel, FeedCallback, HeadOutput, RolloutOutput, interleave_members
from model_config import ModelConfig
from models.single import SingleModel
from numcore import Rng, Tensor


class DeepEnsembleModel(BaseModel):
    """K independently initialized networks, trained separately on the full data"""

    def __init__(self, config: ModelConfig, rng: Rng):
        super().__init__(config)
        member_config = replace(config, method="single", ensemble_size=1)
        self.member_models: List[SingleModel] = [
            SingleModel(member_config, rng.stream(f"member_{k}")) for k in range(config.ensemble_size)
        ]
        self.is_built = True

    @property
    def name(self) -> str:
        return "Deep Ensemble"

    @property
    def members(self) -> int:
        return len(self.member_models)

    def training_units(self) -> List[BaseModel]:
        return list(self.member_models)

    def named_parameters(self) -> Dict[str, Tensor]:
        params: Dict[str, Tensor] = {}
        for k, member in enumerate(self.member_models):
            for name, param in member.named_parameters().items():
                params[f"member_{k}.{name}"] = param
        return params

    def forward(self, x, rng: Optional[Rng] = None, training: bool = False) -> HeadOutput:
        self._require_built()
        outputs = [member.forward(x, rng, training) for member in self.member_models]
        merged = HeadOutput(members=self.members)
        for field_name in ("mean", "log_var", "probs"):
            parts = [getattr(o, field_name) for o in outputs]
            if parts[0] is not None:
                setattr(merged, field_name, interleave_members(parts))
        return merged

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
        rollouts = [
            member.rollout(
                context,
                horizon,
                None if rng is None else rng.stream(f"member_{k}"),
                feedback=feedback,
                noise_scale=noise_scale,
                training=training,
            )
            for k, member in enumerate(self.member_models)
        ]
        source = "model_mean" if feedback == "mean" else "model_sample"
        out = RolloutOutput(members=self.members)
        for step in range(horizon):
            if step > 0 and on_feed is not None:
                on_feed(step, source)
            out.means.append(interleave_members([r.means[step] for r in rollouts]))
            out.log_vars.append(interleave_members([r.log_vars[step] for r in rollouts]))
            fed = interleave_members([Tensor(r.fed[step]) for r in rollouts])
            out.fed.append(fed.numpy())
        return out
