import math

import numpy as np
import pytest

from airsq.data.scenarios import FUTURE_STEPS, Trajectory
from airsq.errors import DivergenceError, InvariantError
from airsq.prediction.loss import (
    PROB_FLOOR,
    LossWeights,
    classification_loss,
    interaction_loss,
    loss_gradients,
    marginal_classification_loss,
    regression_loss,
)


def _straight(offset=0.0, valid=None):
    pts = np.column_stack([np.arange(FUTURE_STEPS, dtype=float) + offset, np.zeros(FUTURE_STEPS)])
    return Trajectory(points=pts, valid=np.ones(FUTURE_STEPS, bool) if valid is None else valid)


def _modes(k, offset):
    return np.stack([_straight(offset).points] * k)


def test_uniform_grid_classification():
    core, marginal = classification_loss(np.full((2, 2), 0.25), (0, 1))
    assert core == pytest.approx(math.log(4), abs=1e-9)
    assert marginal == pytest.approx(math.log(4), abs=1e-9)


def test_unit_offset_regression():
    reg0, reg1 = regression_loss(_modes(2, 1.0), _modes(2, 1.0), _straight(), _straight(), (0, 1))
    assert reg0 == 40.0
    assert reg1 == 40.0


def test_regression_only_counts_valid_steps():
    valid = np.zeros(FUTURE_STEPS, bool)
    valid[:10] = True
    reg0, _ = regression_loss(_modes(1, 2.0), _modes(1, 0.0), _straight(valid=valid), _straight(), (0, 0))
    assert reg0 == pytest.approx(0.5 * 10 * 4.0)


def test_regression_only_uses_assigned_mode():
    pred = _modes(3, 0.0)
    pred[0] += 50.0
    pred[2] += 50.0
    assert regression_loss(pred, pred, _straight(), _straight(), (1, 1)) == (0.0, 0.0)


def test_weighted_total():
    b = interaction_loss(np.full((2, 2), 0.25), _modes(2, 1.0), _modes(2, 1.0), _straight(), _straight(),
                         (0, 0), LossWeights(w_reg=1.0, w_cls=60.0, w_m=1.0))
    assert b.total == pytest.approx(246.36, abs=0.01)
    assert b.reg == 80.0


def test_zero_probability_is_floored():
    grid = np.array([[1.0, 0.0], [0.0, 0.0]])
    core, _ = classification_loss(grid, (1, 1))
    assert core == pytest.approx(-math.log(PROB_FLOOR))


def test_non_finite_component_diverges():
    pred = _modes(1, 0.0)
    pred[0, 3, 0] = np.nan
    with pytest.raises(DivergenceError):
        interaction_loss(np.ones((1, 1)), pred, pred, _straight(), _straight(), (0, 0), LossWeights())


@pytest.mark.parametrize("field", ["w_reg", "w_cls", "w_m"])
def test_negative_weights_rejected(field):
    with pytest.raises(InvariantError):
        LossWeights(**{field: -1.0})


def test_marginal_classification():
    assert marginal_classification_loss(np.array([0.5, 0.25, 0.25]), 1) == pytest.approx(math.log(4))


def test_loss_gradients_match_finite_differences():
    rng = np.random.default_rng(0)
    grid = rng.dirichlet(np.ones(9)).reshape(3, 3)
    pred0 = rng.normal(size=(3, FUTURE_STEPS, 2))
    pred1 = rng.normal(size=(3, FUTURE_STEPS, 2))
    valid = rng.random(FUTURE_STEPS) > 0.2
    gt0 = Trajectory(points=rng.normal(size=(FUTURE_STEPS, 2)), valid=valid)
    gt1 = Trajectory(points=rng.normal(size=(FUTURE_STEPS, 2)), valid=np.ones(FUTURE_STEPS, bool))
    weights = LossWeights(w_reg=0.7, w_cls=3.0, w_m=0.5)
    assignment = (2, 0)

    def total(g, p0, p1):
        return interaction_loss(g, p0, p1, gt0, gt1, assignment, weights).total

    d_grid, d0, d1 = loss_gradients(grid, pred0, pred1, gt0, gt1, assignment, weights)
    h = 1e-6
    checks = [(grid, d_grid, 0), (pred0, d0, 1), (pred1, d1, 2)]
    for base, analytic, which in checks:
        for idx in list(np.ndindex(base.shape))[:: max(1, base.size // 40)]:
            args = [grid, pred0, pred1]
            up, down = base.copy(), base.copy()
            up[idx] += h
            down[idx] -= h
            args[which] = up
            f_up = total(*args)
            args[which] = down
            f_down = total(*args)
            numeric = (f_up - f_down) / (2 * h)
            assert abs(numeric - analytic[idx]) <= 1e-6 * max(1.0, abs(numeric))
