import itertools

import numpy as np
import pytest

from airsq.data.scenarios import FUTURE_STEPS, Trajectory
from airsq.errors import ConfigError, InvariantError
from airsq.evaluation.metrics import (
    JointTruth,
    MapConfig,
    average_precision,
    bucket_of,
    compare_baseline,
    evaluate,
    joint_map,
    joint_truth,
    min_joint_ade,
    min_joint_fde,
)
from airsq.prediction.anchors import assign_pair
from conftest import make_prediction

T = np.arange(1, FUTURE_STEPS + 1) * 0.1


def _line(dx=0.0, dy=0.0, speed=5.0):
    return np.column_stack([speed * T + dx, np.full(FUTURE_STEPS, dy)])


def _truth(assignment=(1, 0), valid0=None):
    gt0 = Trajectory(points=_line(), valid=np.ones(FUTURE_STEPS, bool) if valid0 is None else valid0)
    gt1 = Trajectory.fully_valid(_line(dy=10.0))
    return JointTruth(gt0, gt1, assignment)


def _scene(offset0=0.0, grid=((0.1, 0.1), (0.7, 0.1)), types=("vehicle", "vehicle")):
    """Mode 1 of agent 0 and mode 0 of agent 1 follow the truth (agent 0 shifted by `offset0` m)."""
    traj0 = np.stack([_line(dy=50.0), _line(dy=offset0)])
    traj1 = np.stack([_line(dy=10.0), _line(dy=-40.0)])
    return make_prediction(grid, traj0, traj1, types)


def test_average_precision_example():
    entries = [(0.9, True), (0.8, False), (0.7, True)]
    assert average_precision(entries, positives=2) == pytest.approx(0.8333, abs=1e-4)


def test_average_precision_sorts_by_confidence():
    entries = [(0.7, True), (0.9, True), (0.8, False)]
    assert average_precision(entries, positives=2) == pytest.approx(0.8333, abs=1e-4)


@pytest.mark.parametrize("entries, positives", [([], 3), ([(0.5, True)], 0)])
def test_average_precision_degenerate(entries, positives):
    assert average_precision(entries, positives) == 0.0


def test_perfect_predictions_score_one():
    result = joint_map([_scene()] * 3, [_truth()] * 3)
    assert result.mAP == pytest.approx(1.0)
    assert result.counts == {"vehicle-vehicle": 3}


@pytest.mark.parametrize("offset, hit", [(1.9, True), (2.1, False)])
def test_threshold_gates_the_first_measurement_step(offset, hit):
    result = joint_map([_scene(offset0=offset)], [_truth()])
    assert result.mAP == (1.0 if hit else 0.0)


def test_invalid_measurement_step_is_skipped():
    valid = np.ones(FUTURE_STEPS, bool)
    valid[29] = False
    pred = _scene()
    pred.marginal0.trajectories[1, 29] += 10.0
    assert joint_map([pred], [_truth(valid0=valid)]).mAP == 1.0


def test_agent_with_nothing_to_check_is_a_miss():
    valid = np.ones(FUTURE_STEPS, bool)
    valid[[29, 49, 79]] = False
    assert joint_map([_scene()], [_truth(valid0=valid)]).mAP == 0.0


def test_only_the_first_hit_counts():
    pred = _scene()
    pred.marginal1.trajectories[1] = _line(dy=10.5)
    # cells (1, 0) and (1, 1) both hit; the lower ranked one is a false positive
    result = joint_map([pred, _scene(offset0=5.0, grid=((0.05, 0.05), (0.85, 0.05)))], [_truth(), _truth()])
    assert result.mAP == pytest.approx(average_precision(
        [(0.85, False), (0.05, False), (0.05, False), (0.05, False), (0.7, True), (0.1, False), (0.1, False), (0.1, False)],
        positives=2,
    ))


def test_exact_trajectories_never_lower_the_map():
    rng = np.random.default_rng(9)
    for _ in range(20):
        truths, parts = [], []
        for _ in range(8):
            gt0, gt1 = _line(dy=rng.uniform(-5.0, 5.0)), _line(dy=rng.uniform(10.0, 20.0))
            # constant offsets up to 4 m: some cells hit, some miss
            traj0 = gt0[None] + rng.uniform(-4.0, 4.0, (3, 1, 2))
            traj1 = gt1[None] + rng.uniform(-4.0, 4.0, (3, 1, 2))
            parts.append((rng.dirichlet(np.ones(9)).reshape(3, 3), traj0, traj1))
            truths.append(JointTruth(Trajectory.fully_valid(gt0), Trajectory.fully_valid(gt1), (0, 0)))
        before = joint_map([make_prediction(*p) for p in parts], truths).mAP

        s = int(rng.integers(0, 8))
        i, j = (int(v) for v in rng.integers(0, 3, size=2))
        grid, traj0, traj1 = parts[s]
        traj0, traj1 = traj0.copy(), traj1.copy()
        traj0[i] = truths[s].gt0.points
        traj1[j] = truths[s].gt1.points
        parts[s] = (grid, traj0, traj1)
        after = joint_map([make_prediction(*p) for p in parts], truths).mAP
        assert after >= before - 1e-12


def test_buckets_ignore_slot_order():
    a = _scene(types=("pedestrian", "vehicle"))
    b = _scene(types=("vehicle", "pedestrian"))
    assert bucket_of(a) == bucket_of(b) == "pedestrian-vehicle"
    result = joint_map([a, b, _scene()], [_truth()] * 3)
    assert result.counts == {"pedestrian-vehicle": 2, "vehicle-vehicle": 1}
    assert set(result.buckets) == {"pedestrian-vehicle", "vehicle-vehicle"}


def test_mean_over_buckets():
    good = _scene(types=("cyclist", "vehicle"))
    bad = _scene(offset0=10.0)
    assert joint_map([good, bad], [_truth(), _truth()]).mAP == pytest.approx(0.5)


def test_min_ade_fde_match_brute_force():
    rng = np.random.default_rng(0)
    traj0 = rng.normal(0, 3, size=(3, FUTURE_STEPS, 2)) + _line()
    traj1 = rng.normal(0, 3, size=(3, FUTURE_STEPS, 2)) + _line(dy=10.0)
    pred = make_prediction(np.full((3, 3), 1 / 9), traj0, traj1)
    truth = _truth()

    def ade(p, g):
        return np.mean(np.linalg.norm(p - g.points, axis=1))

    def fde(p, g):
        return np.linalg.norm(p[-1] - g.points[-1])

    cells = list(itertools.product(range(3), range(3)))
    expected_ade = min((ade(traj0[i], truth.gt0) + ade(traj1[j], truth.gt1)) / 2 for i, j in cells)
    expected_fde = min((fde(traj0[i], truth.gt0) + fde(traj1[j], truth.gt1)) / 2 for i, j in cells)
    assert min_joint_ade(pred, truth) == pytest.approx(expected_ade)
    assert min_joint_fde(pred, truth) == pytest.approx(expected_fde)


def test_fde_uses_last_valid_step():
    valid = np.zeros(FUTURE_STEPS, bool)
    valid[:40] = True
    pred = _scene()
    pred.marginal0.trajectories[1, 39] += [3.0, 4.0]
    pred.marginal0.trajectories[1, 40:] += 100.0
    assert min_joint_fde(pred, _truth(valid0=valid)) == pytest.approx(2.5)


def test_displacement_needs_a_valid_step():
    with pytest.raises(InvariantError):
        min_joint_ade(_scene(), _truth(valid0=np.zeros(FUTURE_STEPS, bool)))


def test_evaluate_report():
    report = evaluate([_scene()] * 2, [_truth()] * 2)
    assert set(report) == {"mAP", "buckets", "counts", "minADE", "minFDE", "cls_core", "marginal", "L_cls", "L_reg"}
    assert report["minADE"] == pytest.approx(0.0, abs=1e-12)
    assert report["L_reg"] == pytest.approx(0.0, abs=1e-12)
    assert report["cls_core"] == pytest.approx(-np.log(0.7))


def test_compare_baseline():
    # a product-shaped grid is its own baseline
    grid = np.outer([0.2, 0.8], [0.9, 0.1])
    report = compare_baseline([_scene(grid=grid)], [_truth()])
    assert report["baseline_mAP"] == 1.0
    assert report["relative_gain"] == pytest.approx(0.0)

    missed = compare_baseline([_scene(offset0=10.0)], [_truth()])
    assert missed["baseline_mAP"] == 0.0
    assert missed["relative_gain"] is None


def test_joint_map_input_errors():
    with pytest.raises(InvariantError):
        joint_map([], [])
    with pytest.raises(InvariantError):
        joint_map([_scene()], [_truth(), _truth()])


@pytest.mark.parametrize("kwargs", [
    {"steps": (30, 50), "thresholds": (2.0,)},
    {"thresholds": (2.0, 0.0, 6.0)},
    {"steps": (0, 50, 80)},
    {"steps": (30, 50, 81)},
    {"top_k": 0},
])
def test_map_config_errors(kwargs):
    with pytest.raises(ConfigError):
        MapConfig(**kwargs)


def test_map_config_from_json():
    assert MapConfig.from_json({"top_k": 2}).top_k == 2
    with pytest.raises(ConfigError):
        MapConfig.from_json({"topk": 2})


def test_joint_truth(scenario, anchor_sets):
    truth = joint_truth(scenario, anchor_sets)
    assert truth.gt0 == scenario.pair_agent(0).future
    assert truth.assignment == assign_pair(scenario, anchor_sets)
