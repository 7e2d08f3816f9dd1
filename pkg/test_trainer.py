"""Test Adam, the mini-batch loop and autoregressive sequence training."""

import numpy as np
import pytest

from data import random_split, series_from_values, table_from_arrays
from errors import ConfigError, ContractError
from losses import gaussian_nll
from model_config import ModelConfig
from models import build
from numcore import Rng, Tensor, backward
from trainer import AdamState, TrainConfig, Trainer, adam_step, train


def linear_toy(seed=0, n=256):
    rng = Rng(seed, "toy")
    x = rng.uniform(-1, 1, (n, 1))
    y = 2.0 * x[:, 0] + (0.1 + 0.3 * np.abs(x[:, 0])) * rng.standard_normal(n)
    return random_split(table_from_arrays(x, y, "regression"), Rng(seed, "split"))


def small_config(method="batch_ensemble", task="regression", input_dim=1, **kwargs):
    kwargs.setdefault("hidden_dims", [16])
    kwargs.setdefault("ensemble_size", 3)
    return ModelConfig(task=task, input_dim=input_dim, method=method, **kwargs)


def snapshot(model):
    return {name: p.values.copy() for name, p in model.named_parameters().items()}


# -----------------------------------------------------------------------
# adam_step
# -----------------------------------------------------------------------


def test_zero_gradient_leaves_parameters():
    w = Tensor([0.3, -0.2], requires_grad=True)
    adam_step({"w": w}, {"w": np.zeros(2)}, AdamState(), TrainConfig())
    assert w.values.tolist() == [0.3, -0.2]


def test_first_step_moves_by_learning_rate():
    w = Tensor([1.0], requires_grad=True)
    state = AdamState()
    adam_step({"w": w}, {"w": np.ones(1)}, state, TrainConfig(learning_rate=0.005))
    assert w.values[0] - 1.0 == pytest.approx(-0.005, abs=1e-9)
    assert state.step == 1


def test_constant_gradient_step_bound():
    cfg = TrainConfig(learning_rate=0.01)
    w = Tensor([0.0], requires_grad=True)
    state = AdamState()
    previous = 0.0
    for _ in range(100):
        adam_step({"w": w}, {"w": np.ones(1)}, state, cfg)
        assert abs(w.values[0] - previous) <= cfg.learning_rate * (1 + 1e-6)
        previous = w.values[0]


def test_weight_decay_pulls_towards_zero():
    w = Tensor([2.0], requires_grad=True)
    adam_step({"w": w}, {"w": np.zeros(1)}, AdamState(), TrainConfig(weight_decay=0.1))
    assert w.values[0] < 2.0


def test_adam_gradient_contract():
    w = Tensor(np.zeros((2, 2)), requires_grad=True)
    with pytest.raises(ContractError):
        adam_step({"w": w}, {"w": np.zeros(3)}, AdamState(), TrainConfig())
    with pytest.raises(ContractError):
        adam_step({"w": w}, {}, AdamState(), TrainConfig())


@pytest.mark.parametrize(
    "kwargs",
    [{"epochs": 0}, {"learning_rate": -0.1}, {"batch_size": 0}, {"seeds": []}, {"beta1": 1.0}, {"eps": 0.0}],
)
def test_train_config_validation(kwargs):
    with pytest.raises(ConfigError):
        TrainConfig(**kwargs)


# -----------------------------------------------------------------------
# tabular training
# -----------------------------------------------------------------------


def test_zero_learning_rate_keeps_parameters():
    model = build(small_config(), Rng(0, "init"))
    before = snapshot(model)
    train(model, linear_toy(), TrainConfig(epochs=2, learning_rate=0.0), Rng(0, "train"))
    for name, values in snapshot(model).items():
        assert np.array_equal(values, before[name])


def test_training_nll_decreases_on_linear_toy():
    decreasing = 0
    for seed in range(5):
        model = build(small_config(), Rng(seed, "init"))
        result = train(model, linear_toy(seed), TrainConfig(epochs=10, learning_rate=0.01), Rng(seed, "train"))
        losses = result.epoch_trace()["loss"].to_numpy()
        decreasing += bool(np.all(np.diff(losses) < 0))
    assert decreasing >= 4


def test_same_seed_replays_bit_identically():
    finals = []
    for _ in range(2):
        model = build(small_config(method="mc_dropout"), Rng(7, "init"))
        train(model, linear_toy(), TrainConfig(epochs=3), Rng(7, "train"))
        finals.append(snapshot(model))
    for name in finals[0]:
        assert np.array_equal(finals[0][name], finals[1][name])


def test_loss_trace_layout():
    model = build(small_config(), Rng(0))
    result = Trainer(TrainConfig(epochs=4)).train(model, linear_toy(), Rng(1))
    assert list(result.loss_trace.columns) == ["unit", "epoch", "loss", "penalty"]
    assert result.loss_trace["epoch"].tolist() == [1, 2, 3, 4]
    assert result.elapsed_seconds > 0


def test_deep_ensemble_trains_independent_units():
    model = build(small_config(method="deep_ensemble"), Rng(0, "init"))
    result = train(model, linear_toy(), TrainConfig(epochs=2), Rng(0, "train"))
    assert sorted(result.loss_trace["unit"].unique()) == [0, 1, 2]
    assert len(result.epoch_trace()) == 2
    first, second = (m.named_parameters() for m in model.member_models[:2])
    assert any(not np.allclose(first[name].values, second[name].values) for name in first)


def test_parallel_members_match_sequential():
    finals = []
    for workers in (1, 3):
        model = build(small_config(method="deep_ensemble"), Rng(0, "init"))
        train(model, linear_toy(), TrainConfig(epochs=2, workers=workers), Rng(0, "train"))
        finals.append(snapshot(model))
    for name in finals[0]:
        assert np.array_equal(finals[0][name], finals[1][name])


def test_classification_training_runs():
    rng = Rng(3, "cls")
    x = rng.uniform(-1, 1, (120, 2))
    labels = (x[:, 0] + x[:, 1] > 0).astype(np.int64)
    dataset = random_split(table_from_arrays(x, labels, "classification"), Rng(3, "split"))
    model = build(small_config(task="classification", input_dim=2), Rng(0))
    result = train(model, dataset, TrainConfig(epochs=3), Rng(1))
    assert np.all(np.isfinite(result.loss_trace["loss"]))


# -----------------------------------------------------------------------
# gradient routing
# -----------------------------------------------------------------------


def test_member_loss_routes_to_its_own_adapters_only():
    model = build(small_config(), Rng(0))
    x = Rng(1).uniform(-1, 1, (8, 1))
    y = Rng(2).uniform(0, 1, 8)
    out = model.forward(x, training=True)
    member = out.member_slice(0)
    model.zero_grad()
    backward(gaussian_nll(member.mean, member.log_var, y).value)
    layer = model.network.hidden[0]
    assert np.any(layer.weight.grad != 0)
    assert np.any(layer.r.grad[0] != 0)
    assert np.array_equal(layer.r.grad[1:], np.zeros_like(layer.r.grad[1:]))


# -----------------------------------------------------------------------
# time series
# -----------------------------------------------------------------------


def test_sequence_loss_feeds_model_means():
    dataset = series_from_values(np.sin(np.arange(80) / 4.0), context=12, horizon=5)
    contexts, targets = dataset.train_windows()
    model = build(small_config(task="timeseries", input_dim=1, recurrent_hidden=8), Rng(0))
    fed = []
    loss = model.sequence_loss(contexts[:4], targets[:4], on_feed=lambda step, source: fed.append(source))
    assert np.isfinite(loss.item())
    assert fed == ["model_mean"] * 4


def test_sequence_training_runs_for_every_method():
    dataset = series_from_values(np.sin(np.arange(60) / 3.0), context=12, horizon=5)
    for method in ("batch_ensemble", "mc_dropout", "deep_ensemble", "single"):
        model = build(small_config(method=method, task="timeseries", recurrent_hidden=8), Rng(0))
        result = train(model, dataset, TrainConfig(epochs=1), Rng(1))
        assert np.all(np.isfinite(result.loss_trace["loss"]))
