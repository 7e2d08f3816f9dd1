"""
Model construction, parameter counting and checkpoint files.

A checkpoint is an .npz archive holding the model config as JSON
(`__config__`), the build seed (`__seed__`) and every named parameter.
"""

import json
import logging
from pathlib import Path
from typing import Dict, Type, Union

import numpy as np

from base_model import BaseModel
from errors import ConfigError, DataError
from model_config import ModelConfig
from models.batch_ensemble import BatchEnsembleModel
from models.deep_ensemble import DeepEnsembleModel
from models.mc_dropout import MCDropoutModel
from models.single import SingleModel
from numcore import Rng, Tensor

logger = logging.getLogger(__name__)

METHODS: Dict[str, Type[BaseModel]] = {
    "batch_ensemble": BatchEnsembleModel,
    "mc_dropout": MCDropoutModel,
    "deep_ensemble": DeepEnsembleModel,
    "single": SingleModel,
}


def build(config: ModelConfig, rng: Rng) -> BaseModel:
    """
    Wire the model described by `config`.

    Args:
        config: validated architecture
        rng: stream all initial weights are drawn from

    Returns:
        Built model ready for training
    """
    try:
        model_class = METHODS[config.method]
    except KeyError:
        raise ConfigError(f"Unknown method {config.method!r}; expected one of {sorted(METHODS)}")
    model = model_class(config, rng)
    logger.debug(f"{model.name} - built with {param_count(model)} parameters")
    return model


def param_count(model: BaseModel) -> int:
    """Exact number of trainable scalars"""
    return sum(p.size for p in model.named_parameters().values())


def walk_parameters(obj) -> Dict[int, Tensor]:
    """
    Find every trainable tensor reachable from `obj` by walking attributes,
    lists, tuples and dicts. Independent of `named_parameters`.
    """
    found: Dict[int, Tensor] = {}
    seen = set()
    stack = [obj]
    while stack:
        item = stack.pop()
        if id(item) in seen:
            continue
        seen.add(id(item))
        if isinstance(item, Tensor):
            if item.requires_grad and item.is_leaf:
                found[id(item)] = item
            continue
        if isinstance(item, dict):
            stack.extend(item.values())
        elif isinstance(item, (list, tuple)):
            stack.extend(item)
        elif hasattr(item, "__dict__") and not isinstance(item, (type, ModelConfig, Rng)):
            stack.extend(vars(item).values())
    return found


def save_checkpoint(model: BaseModel, path: Union[str, Path], seed: int) -> Path:
    """Write config, seed and parameters to an .npz archive"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {name: param.values for name, param in model.named_parameters().items()}
    with open(path, "wb") as handle:
        np.savez(
            handle,
            __config__=np.array(json.dumps(model.config.to_dict(), sort_keys=True)),
            __seed__=np.array(seed, dtype=np.uint64),
            **arrays,
        )
    return path


def checkpoint_seed(path: Union[str, Path]) -> int:
    """Build seed stored in a checkpoint"""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"Checkpoint {path} does not exist")
    with np.load(path, allow_pickle=False) as archive:
        return int(archive["__seed__"])


def load_checkpoint(path: Union[str, Path]) -> BaseModel:
    """Rebuild a model from an archive written by `save_checkpoint`"""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"Checkpoint {path} does not exist")
    with np.load(path, allow_pickle=False) as archive:
        config = ModelConfig.from_dict(json.loads(str(archive["__config__"])))
        seed = int(archive["__seed__"])
        model = build(config, Rng(seed, "init"))
        params = model.named_parameters()
        stored = set(archive.files) - {"__config__", "__seed__"}
        if stored != set(params):
            missing = sorted(set(params) - stored)
            extra = sorted(stored - set(params))
            raise DataError(f"Checkpoint {path} does not match its config: missing {missing}, unexpected {extra}")
        for name, param in params.items():
            values = archive[name]
            if values.shape != param.shape:
                raise DataError(f"Checkpoint tensor {name} has shape {values.shape}, expected {param.shape}")
            param.values[...] = values
    return model
