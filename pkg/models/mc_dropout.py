from models.network import Network
from models.single import SingleModel
from numcore import Rng


class MCDropoutModel(SingleModel):
    """
    Single network with dropout after every hidden activation, kept active at
    inference. Prediction replicates each input K times so every row draws
    its own mask: K stochastic passes in one batch.
    """

    def _build_network(self, rng: Rng) -> Network:
        return Network(self.config, rng, dropout_rate=self.config.dropout_rate)

    @property
    def name(self) -> str:
        return "MC Dropout"

    @property
    def members(self) -> int:
        return self.config.ensemble_size

    def members_for(self, training: bool) -> int:
        return 1 if training else self.members
