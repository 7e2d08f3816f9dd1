"""Test model assembly, exact parameter counts, prediction and checkpoints."""

import numpy as np
import pytest

import layers
import models.network as network_module

from base_model import PredictiveDistribution
from errors import ConfigError, ContractError, DataError, ParameterError, ShapeError
from layers import orthogonality_penalty
from metrics import decompose_regression
from model_config import ModelConfig
from models import (
    BatchEnsembleModel,
    DeepEnsembleModel,
    MCDropoutModel,
    SingleModel,
    build,
    checkpoint_seed,
    load_checkpoint,
    param_count,
    save_checkpoint,
    walk_parameters,
)
from numcore import Rng, Tensor

# (task, input_dim, classes) -> (batch_ensemble, single / mc_dropout, deep_ensemble)
PARAMETER_TABLE = {
    "adult": (("classification", 108, 2), (7584, 4610, 46100)),
    "breast_cancer": (("classification", 30, 2), (4308, 2114, 21140)),
    "phoneme": (("classification", 5, 2), (3258, 1314, 13140)),
    "california": (("regression", 8, 2), (3704, 1410, 14100)),
    "diabetes": (("regression", 10, 2), (3788, 1474, 14740)),
    "electric": (("timeseries", 1, 2), (10790, 5538, 55380)),
    "temperature": (("timeseries", 1, 2), (10790, 5538, 55380)),
}


def config(task="regression", input_dim=8, method="batch_ensemble", **kwargs):
    return ModelConfig(task=task, input_dim=input_dim, method=method, **kwargs)


def neutralize(model):
    for layer in model.network.ensemble_layers():
        for name, stack in layer.adapter_stacks().items():
            stack.values[...] = 0.0 if name == "B" else 1.0


# -----------------------------------------------------------------------
# parameter counts
# -----------------------------------------------------------------------


@pytest.mark.parametrize("dataset", sorted(PARAMETER_TABLE))
def test_parameter_counts_reproduce_table(dataset):
    (task, p, classes), (be, single, deep) = PARAMETER_TABLE[dataset]
    counts = {
        method: param_count(build(config(task, p, method, num_classes=classes), Rng(0)))
        for method in ("batch_ensemble", "mc_dropout", "single", "deep_ensemble")
    }
    assert counts["batch_ensemble"] == be
    assert counts["mc_dropout"] == single
    assert counts["single"] == single
    assert counts["deep_ensemble"] == deep


@pytest.mark.parametrize("method", ["batch_ensemble", "mc_dropout", "single", "deep_ensemble"])
@pytest.mark.parametrize("task, p", [("regression", 8), ("classification", 30), ("timeseries", 1)])
def test_named_parameters_match_object_walk(method, task, p):
    model = build(config(task, p, method), Rng(1))
    named = model.named_parameters()
    walked = walk_parameters(model)
    assert set(map(id, named.values())) == set(walked)
    assert model.param_count == param_count(model)


def test_be_layer_count_changes_only_trailing_layers():
    full = build(config(hidden_dims=[16] * 9, be_layer_count=10), Rng(0))
    last = build(config(hidden_dims=[16] * 9, be_layer_count=1), Rng(0))
    assert param_count(full) > param_count(last)
    assert len(last.network.ensemble_layers()) == 2  # both heads
    assert len(full.network.ensemble_layers()) == 11


def test_gate_mask_on_tabular_task_is_config_error():
    with pytest.raises(ConfigError):
        config(gate_mask=("C",))


def test_invalid_configs():
    with pytest.raises(ConfigError):
        config(method="bagging")
    with pytest.raises(ConfigError):
        config(hidden_dims=[])
    with pytest.raises(ConfigError):
        config(be_layer_count=4)
    with pytest.raises(ConfigError):
        ModelConfig.from_dict({"task": "regression", "input_dim": 3, "depth": 2})


def test_config_dict_round_trip():
    original = config(task="timeseries", input_dim=1, gate_mask=("Z", "C"), adapter_mask=("S", "R"))
    restored = ModelConfig.from_dict(original.to_dict())
    assert restored == original
    assert restored.gate_mask == ("C", "Z")


# -----------------------------------------------------------------------
# forward and predict
# -----------------------------------------------------------------------


def test_single_predict_has_one_member():
    model = build(config(method="single"), Rng(0))
    pred = model.predict(Rng(1).uniform(size=(5, 8)))
    assert pred.members == 1
    assert np.array_equal(pred.mean, pred.member_mean[0])
    assert np.array_equal(pred.var, pred.member_var[0])


def test_predictive_variances_positive_and_probabilities_normalized():
    reg = build(config(), Rng(0)).predict(Rng(1).uniform(size=(7, 8)))
    assert reg.member_mean.shape == (10, 7)
    assert np.all(reg.member_var > 0) and np.all(reg.var > 0)
    cls = build(config("classification", 30, num_classes=3), Rng(0)).predict(Rng(1).uniform(size=(7, 30)))
    assert cls.member_probs.shape == (10, 7, 3)
    assert np.allclose(cls.member_probs.sum(axis=-1), 1.0, atol=1e-9)
    assert np.allclose(cls.probs.sum(axis=-1), 1.0, atol=1e-9)


def test_batch_ensemble_single_member_collapses_to_single():
    be = BatchEnsembleModel(config(ensemble_size=1), Rng(3))
    single = SingleModel(config(method="single", ensemble_size=1), Rng(3))
    neutralize(be)
    x = Rng(4).uniform(size=(20, 8))
    a, b = be.predict(x), single.predict(x)
    assert np.allclose(a.mean, b.mean, atol=1e-12, rtol=0)
    assert np.allclose(a.var, b.var, atol=1e-12, rtol=0)


def test_identical_deep_ensemble_members_have_no_epistemic_spread():
    model = DeepEnsembleModel(config(method="deep_ensemble", ensemble_size=4), Rng(0))
    reference = model.member_models[0].named_parameters()
    for member in model.member_models[1:]:
        for name, param in member.named_parameters().items():
            param.values[...] = reference[name].values
    pred = model.predict(Rng(1).uniform(size=(6, 8)))
    _, _, epistemic = decompose_regression(pred.member_mean, pred.member_var)
    assert np.allclose(epistemic, 0.0, atol=1e-20)


def test_mc_dropout_without_dropout_repeats_itself():
    model = MCDropoutModel(config(method="mc_dropout", dropout_rate=0.0), Rng(0))
    pred = model.predict(Rng(1).uniform(size=(6, 8)), Rng(2))
    assert np.allclose(pred.member_mean, pred.member_mean[0], atol=0)


def test_mc_dropout_passes_differ():
    model = MCDropoutModel(config(method="mc_dropout", dropout_rate=0.3), Rng(0))
    pred = model.predict(Rng(1).uniform(size=(6, 8)), Rng(2))
    assert pred.members == 10
    assert not np.allclose(pred.member_mean[0], pred.member_mean[1])


def test_batch_ensemble_members_differ():
    pred = build(config(), Rng(0)).predict(Rng(1).uniform(size=(6, 8)))
    assert not np.allclose(pred.member_mean[0], pred.member_mean[1])


def test_training_loss_is_finite_scalar():
    model = build(config(), Rng(0))
    loss = model.loss(Rng(1).uniform(size=(8, 8)), Rng(2).uniform(size=8))
    assert loss.total.ndim == 0
    assert np.isfinite(loss.item())


def stack_penalty_sum(model, strength):
    return sum(
        orthogonality_penalty(stack, strength).item()
        for layer in model.network.ensemble_layers()
        for stack in layer.adapter_stacks().values()
    )


def test_orthogonality_penalty_covers_every_stack():
    model = build(config(ortho_lambda=0.01), Rng(0))
    assert model.penalty().item() == pytest.approx(stack_penalty_sum(model, 0.01))
    # heads are 1 wide, narrower than K=10, and still count
    head = model.network.heads["mean"]
    assert orthogonality_penalty(head.s, 0.01).item() > 0.0


def test_orthogonality_penalty_enters_loss():
    model = build(config(init_scheme="orthogonal", ortho_lambda=0.01, hidden_dims=[16, 16]), Rng(0))
    x, y = Rng(1).uniform(size=(8, 8)), Rng(2).uniform(size=8)
    before = model.loss(x, y).penalty_item
    assert before == pytest.approx(stack_penalty_sum(model, 0.01))
    model.network.hidden[0].s.values[0] *= 2.0
    assert model.loss(x, y).penalty_item > before


def test_no_penalty_without_strength():
    assert build(config(), Rng(0)).penalty() is None


def test_predict_from_distribution_aggregates_mixture():
    model = build(config(ensemble_size=3), Rng(0))
    out = model.forward(Rng(1).uniform(size=(4, 8)))
    pred = PredictiveDistribution.from_heads("regression", out)
    means = pred.member_mean
    expected_var = pred.member_var.mean(axis=0) + ((means - means.mean(axis=0)) ** 2).mean(axis=0)
    assert np.allclose(pred.var, expected_var)


# -----------------------------------------------------------------------
# rollouts
# -----------------------------------------------------------------------


def test_rollout_feeds_means_and_reports_source():
    model = build(config("timeseries", 1, ensemble_size=2), Rng(0))
    sources = []
    out = model.rollout(Rng(1).uniform(size=(3, 12)), 4, on_feed=lambda step, source: sources.append((step, source)))
    assert out.horizon == 4
    assert out.path_values().shape == (6, 4)
    assert np.array_equal(out.path_values()[:, 0], out.means[0].values)
    assert sources == [(1, "model_mean"), (2, "model_mean"), (3, "model_mean")]


def test_sampled_rollout_needs_stream_and_valid_horizon():
    model = build(config("timeseries", 1, method="single"), Rng(0))
    context = Rng(1).uniform(size=(2, 12))
    with pytest.raises(ContractError):
        model.rollout(context, 3, feedback="sample")
    with pytest.raises(ParameterError):
        model.rollout(context, 0)


def test_tabular_model_cannot_roll_out():
    with pytest.raises(ContractError):
        build(config(), Rng(0)).rollout(np.zeros((1, 12)), 2)


def test_deep_ensemble_rollout_interleaves_members():
    model = build(config("timeseries", 1, method="deep_ensemble", ensemble_size=3), Rng(0))
    context = Rng(1).uniform(size=(2, 12))
    out = model.rollout(context, 2)
    for k, member in enumerate(model.member_models):
        alone = member.rollout(context, 2)
        assert np.allclose(out.path_values()[k::3], alone.path_values())


def test_deep_ensemble_reports_each_feed_once():
    model = build(config("timeseries", 1, method="deep_ensemble", ensemble_size=3), Rng(0))
    sources = []
    model.rollout(Rng(1).uniform(size=(2, 12)), 4, Rng(2), feedback="sample", on_feed=lambda *fed: sources.append(fed))
    assert sources == [(1, "model_sample"), (2, "model_sample"), (3, "model_sample")]


def test_mc_dropout_rollout_keeps_masks_for_the_horizon(monkeypatch):
    drawn = []
    original = layers.dropout_mask

    def counting_mask(shape, spec, rng):
        drawn.append(shape)
        return original(shape, spec, rng)

    monkeypatch.setattr(layers, "dropout_mask", counting_mask)
    monkeypatch.setattr(network_module, "dropout_mask", counting_mask)

    model = build(config("timeseries", 1, method="mc_dropout", ensemble_size=4, dropout_rate=0.3), Rng(0))
    model.rollout(Rng(1).uniform(size=(2, 12)), 5, Rng(2), feedback="sample")
    assert drawn == [(8, 32), (8, 32)]


# -----------------------------------------------------------------------
# checkpoints
# -----------------------------------------------------------------------


@pytest.mark.parametrize("method", ["batch_ensemble", "deep_ensemble", "mc_dropout"])
def test_checkpoint_round_trip_is_bit_exact(tmp_path, method):
    model = build(config("timeseries", 1, method=method, gate_mask=("Z", "F")), Rng(9, "init"))
    for param in model.named_parameters().values():
        param.values += Rng(10).normal(size=param.shape)
    path = save_checkpoint(model, tmp_path / "model.npz", seed=9)
    restored = load_checkpoint(path)
    assert checkpoint_seed(path) == 9
    assert restored.config == model.config
    for name, param in model.named_parameters().items():
        assert np.array_equal(restored.named_parameters()[name].values, param.values)


def test_missing_checkpoint_is_data_error(tmp_path):
    with pytest.raises(DataError):
        load_checkpoint(tmp_path / "absent.npz")


def test_forward_rejects_wrong_width():
    with pytest.raises(ShapeError):
        build(config(), Rng(0)).forward(Tensor(np.zeros((2, 3))))
