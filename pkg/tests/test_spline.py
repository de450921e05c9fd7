import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from airsq.errors import InvariantError, ShapeMismatchError
from airsq.prediction.spline import (
    DOMAIN_EPS,
    build_basis,
    interpolate,
    interpolate_backward,
    sample_parameters,
    uniform_knots,
)

control = arrays(np.float64, (8, 2), elements=st.floats(-100, 100, allow_nan=False))


def _cox_de_boor(i, k, x, t):
    if k == 0:
        return 1.0 if t[i] <= x < t[i + 1] else 0.0
    left = (x - t[i]) / (t[i + k] - t[i]) * _cox_de_boor(i, k - 1, x, t)
    right = (t[i + k + 1] - x) / (t[i + k + 1] - t[i + 1]) * _cox_de_boor(i + 1, k - 1, x, t)
    return left + right


def test_basis_shape_and_partition_of_unity():
    B = build_basis()
    assert B.shape == (80, 8)
    assert np.all(np.abs(B.sum(axis=1) - 1.0) < 1e-12)
    assert np.all((B >= 0.0) & (B <= 1.0))


def test_basis_is_shared_and_read_only():
    assert build_basis() is build_basis()
    with pytest.raises(ValueError):
        build_basis()[0, 0] = 1.0


def test_parameters_span_the_valid_domain():
    u = sample_parameters()
    assert u[0] == 0.0
    assert u[-1] == pytest.approx(5.0 - DOMAIN_EPS, abs=1e-15)
    assert uniform_knots().tolist() == list(range(-3, 9))


@pytest.mark.parametrize("row", [0, 17, 40, 63, 79])
def test_basis_matches_recursive_definition(row):
    t = uniform_knots()
    x = sample_parameters()[row]
    expected = [_cox_de_boor(i, 3, x, t) for i in range(8)]
    np.testing.assert_allclose(build_basis()[row], expected, atol=1e-12)


def test_constant_control_points_reproduce_exactly():
    out = interpolate(np.tile([3.5, -2.0], (8, 1)))
    np.testing.assert_allclose(out, np.tile([3.5, -2.0], (80, 1)), atol=1e-12)


def test_collinear_control_points_stay_on_the_line():
    cp = np.column_stack([np.arange(8) * 2.0, np.arange(8) * 2.0 * 0.5 + 1.0])
    out = interpolate(cp)
    np.testing.assert_allclose(out[:, 1], out[:, 0] * 0.5 + 1.0, atol=1e-9)


@settings(max_examples=40)
@given(a=control, b=control)
def test_interpolate_is_linear(a, b):
    np.testing.assert_allclose(interpolate(a + b), interpolate(a) + interpolate(b), rtol=0, atol=1e-12)


@settings(max_examples=40)
@given(cp=control)
def test_curve_stays_in_the_control_hull(cp):
    out = interpolate(cp)
    assert np.all(out >= cp.min(axis=0) - 1e-9)
    assert np.all(out <= cp.max(axis=0) + 1e-9)


def test_batched_control_points():
    assert interpolate(np.zeros((4, 8, 2))).shape == (4, 80, 2)


def test_backward_matches_finite_differences():
    rng = np.random.default_rng(0)
    cp = rng.normal(size=(8, 2))
    w = rng.normal(size=(80, 2))

    def loss(c):
        return float(np.sum(w * interpolate(c) ** 2))

    grad = interpolate_backward(2.0 * w * interpolate(cp))
    h = 1e-6
    for idx in np.ndindex(cp.shape):
        up, down = cp.copy(), cp.copy()
        up[idx] += h
        down[idx] -= h
        numeric = (loss(up) - loss(down)) / (2 * h)
        assert abs(numeric - grad[idx]) <= 1e-6 * max(abs(numeric), abs(grad[idx]), 1.0)


def test_too_few_control_points():
    with pytest.raises(InvariantError):
        build_basis(80, 3, 3)


def test_wrong_number_of_control_points():
    with pytest.raises(ShapeMismatchError):
        interpolate(np.zeros((7, 2)))
