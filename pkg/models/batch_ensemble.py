from typing import Optional

from models.network import Network
from models.single import SingleModel
from numcore import Rng, Tensor


class BatchEnsembleModel(SingleModel):
    """
    K members sharing every weight matrix, each owning rank-1 adapters.

    Inputs are replicated K times at the first layer, so all members train
    and predict in one vectorized pass.
    """

    def _build_network(self, rng: Rng) -> Network:
        return Network(self.config, rng, ensemble_size=self.config.ensemble_size)

    @property
    def name(self) -> str:
        return "BatchEnsemble"

    @property
    def members(self) -> int:
        return self.config.ensemble_size

    def penalty(self) -> Optional[Tensor]:
        return self.network.penalty(self.config.ortho_lambda)
