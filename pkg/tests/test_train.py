from dataclasses import replace

import numpy as np
import pytest

from airsq.data.scenarios import ObjectType
from airsq.data.synth import synth_generate
from airsq.errors import ConfigError, EmptyDatasetError
from airsq.evaluation.metrics import compare_baseline, evaluate, joint_truth
from airsq.prediction.anchors import fit_all_types
from airsq.prediction.loss import LossWeights
from airsq.prediction.model import batch_loss, predict_joint, prepare_example
from airsq.prediction.params import init_params, is_joint_parameter
from airsq.prediction.train import Adam, TrainConfig, train


def _names(params, joint):
    return [n for n in params if is_joint_parameter(n) == joint]


def test_marginal_training_reduces_the_loss(mixed_scenarios, anchor_sets, tiny_params):
    config = TrainConfig(lr=1e-2, batch_size=2, marginal_epochs=30, joint_epochs=0, representation="plain")
    result = train(mixed_scenarios, tiny_params, anchor_sets, config, seed=0)
    assert len(result.curve) == 30
    assert result.curve[-1]["total"] < result.curve[0]["total"]


@pytest.mark.parametrize("phase, epochs", [("marginal", (200, 0)), ("joint", (0, 200))])
def test_single_batch_overfits(mixed_scenarios, anchor_sets, tiny_params, phase, epochs):
    config = TrainConfig(lr=1e-2, batch_size=2, marginal_epochs=epochs[0], joint_epochs=epochs[1],
                         representation="plain")
    result = train(mixed_scenarios, tiny_params, anchor_sets, config, seed=0)
    assert len(result.curve) == 200
    batch = [prepare_example(s, anchor_sets, result.params) for s in mixed_scenarios]
    final = batch_loss(batch, result.params, LossWeights(), phase).total
    assert final < 0.1 * result.curve[0]["total"]


def test_inputs_are_not_modified(mixed_scenarios, anchor_sets, tiny_params):
    original = tiny_params.copy()
    train(mixed_scenarios, tiny_params, anchor_sets,
          TrainConfig(batch_size=1, marginal_epochs=1, joint_epochs=1, representation="plain"))
    assert tiny_params.equals(original)


def test_marginal_phase_keeps_joint_tensors(mixed_scenarios, anchor_sets, tiny_params):
    result = train(mixed_scenarios, tiny_params, anchor_sets,
                   TrainConfig(batch_size=1, marginal_epochs=2, joint_epochs=0, representation="plain"))
    assert result.params.equals(tiny_params, _names(tiny_params, joint=True))
    assert not result.params.equals(tiny_params, _names(tiny_params, joint=False))
    assert {row["phase"] for row in result.curve} == {"marginal"}


def test_freeze_marginal(mixed_scenarios, anchor_sets, tiny_params):
    config = TrainConfig(batch_size=1, marginal_epochs=1, joint_epochs=2, freeze_marginal=True, representation="plain")
    result = train(mixed_scenarios, tiny_params, anchor_sets, config)
    frozen = _names(tiny_params, joint=False)
    assert result.params.equals(result.marginal_params, frozen)
    assert not result.params.equals(result.marginal_params, _names(tiny_params, joint=True))


def test_training_is_deterministic(mixed_scenarios, anchor_sets, tiny_params):
    config = TrainConfig(batch_size=1, marginal_epochs=1, joint_epochs=1)
    a = train(mixed_scenarios, tiny_params, anchor_sets, config, seed=7)
    b = train(mixed_scenarios, tiny_params, anchor_sets, config, seed=7)
    assert a.curve == b.curve
    assert a.params.equals(b.params)


def test_max_steps_caps_both_phases(mixed_scenarios, anchor_sets, tiny_params):
    config = TrainConfig(batch_size=1, marginal_epochs=2, joint_epochs=2, max_steps=3, representation="plain")
    result = train(mixed_scenarios, tiny_params, anchor_sets, config)
    assert [row["step"] for row in result.curve] == [0, 1, 2]
    assert set(result.curve[0]) == {"step", "phase", "epoch", "total", "cls", "marginal", "reg0", "reg1"}


def test_snapshots(mixed_scenarios, anchor_sets, tiny_params):
    config = TrainConfig(batch_size=1, marginal_epochs=1, joint_epochs=1, snapshot_every=2, representation="plain")
    result = train(mixed_scenarios, tiny_params, anchor_sets, config)
    assert len(result.curve) == 4
    assert len(result.snapshots) == 2
    assert result.snapshots[-1].equals(result.params)


def test_rerasterized_training(mixed_scenarios, anchor_sets, tiny_params):
    config = TrainConfig(batch_size=2, marginal_epochs=1, joint_epochs=2, representation="rerasterized")
    result = train(mixed_scenarios, tiny_params, anchor_sets, config)
    assert [row["phase"] for row in result.curve] == ["marginal", "joint", "joint"]
    assert all(np.isfinite(row["total"]) for row in result.curve)
    assert result.params.all_finite()


def test_balanced_sampling_needs_every_type(mixed_scenarios, anchor_sets, tiny_params):
    # first agents are a vehicle and a cyclist
    with pytest.raises(EmptyDatasetError):
        train(mixed_scenarios, tiny_params, anchor_sets,
              TrainConfig(batch_size=1, marginal_epochs=1, joint_epochs=0, balanced=True, representation="plain"))


def test_first_adam_step_is_lr_sized(tiny_params):
    config = TrainConfig(lr=0.05)
    params = tiny_params.copy()
    rng = np.random.default_rng(0)
    grads = params.map(lambda _, v: rng.choice([-1.0, 1.0], size=v.shape) * rng.uniform(0.1, 2.0, size=v.shape))
    Adam(params, config).step(params, grads, ["trunk.weight"])
    step = params["trunk.weight"] - tiny_params["trunk.weight"]
    np.testing.assert_allclose(step, -0.05 * np.sign(grads["trunk.weight"]), rtol=1e-6)
    assert params.equals(tiny_params, ["trunk.bias"])


@pytest.mark.parametrize("kwargs", [{"representation": "fancy"}, {"batch_size": 0}, {"lr": 0.0}])
def test_train_config_errors(kwargs):
    with pytest.raises(ConfigError):
        TrainConfig(**kwargs)


@pytest.mark.slow
def test_learned_joint_beats_independent_product(tiny_config):
    train_set = synth_generate(2000, seed=11)
    eval_set = synth_generate(500, seed=12)
    anchors = fit_all_types(train_set, {t: 8 for t in ObjectType}, iters=30, seed=0)
    params = init_params(replace(tiny_config, k_max=8), seed=0)
    config = TrainConfig(marginal_epochs=15, joint_epochs=15, representation="plain")
    result = train(train_set, params, anchors, config, seed=0)

    predictions = [predict_joint(s, anchors, result.params) for s in eval_set]
    truths = [joint_truth(s, anchors) for s in eval_set]
    learned = evaluate(predictions, truths)
    baseline = compare_baseline(predictions, truths)
    assert learned["mAP"] > baseline["baseline_mAP"]
    assert learned["L_cls"] < baseline["baseline_L_cls"]
