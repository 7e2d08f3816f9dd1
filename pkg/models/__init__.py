from models.network import Network
from models.single import SingleModel
from models.mc_dropout import MCDropoutModel
from models.deep_ensemble import DeepEnsembleModel
from models.batch_ensemble import BatchEnsembleModel
from models.registry import (
    METHODS,
    build,
    checkpoint_seed,
    load_checkpoint,
    param_count,
    save_checkpoint,
    walk_parameters,
)

__all__ = [
    "Network",
    "SingleModel",
    "MCDropoutModel",
    "DeepEnsembleModel",
    "BatchEnsembleModel",
    "METHODS",
    "build",
    "checkpoint_seed",
    "load_checkpoint",
    "param_count",
    "save_checkpoint",
    "walk_parameters",
]
