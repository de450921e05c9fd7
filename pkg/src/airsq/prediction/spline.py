# /src/airsq/prediction/spline.py

from functools import lru_cache

import numpy as np
from scipy.interpolate import BSpline

from airsq.errors import InvariantError, ShapeMismatchError

NUM_OUT = 80
NUM_CTRL = 8
DEGREE = 3
DOMAIN_EPS = 1e-9


def uniform_knots(num_ctrl: int = NUM_CTRL, degree: int = DEGREE) -> np.ndarray:
    """Open uniform knots -degree .. num_ctrl; the valid domain is [0, num_ctrl - degree]."""
    return np.arange(-degree, num_ctrl + 1, dtype=float)


def sample_parameters(num_out: int = NUM_OUT, num_ctrl: int = NUM_CTRL, degree: int = DEGREE) -> np.ndarray:
    return np.linspace(0.0, (num_ctrl - degree) - DOMAIN_EPS, num_out)


@lru_cache(maxsize=8)
def build_basis(num_out: int = NUM_OUT, num_ctrl: int = NUM_CTRL, degree: int = DEGREE) -> np.ndarray:
    """
    `num_out x num_ctrl` matrix mapping control points to curve samples.

    Rows are the cardinal (uniform, unclamped) B-spline basis functions evaluated at
    evenly spaced parameters; every row is non-negative and sums to one. The
    returned array is read-only and shared between callers.
    """
    if num_ctrl <= degree:
        raise InvariantError("num_ctrl", f"need more than {degree} control points, got {num_ctrl}")
    params = sample_parameters(num_out, num_ctrl, degree)
    basis = BSpline.design_matrix(params, uniform_knots(num_ctrl, degree), degree).toarray()
    basis.setflags(write=False)
    return basis


def interpolate(control_points: np.ndarray, basis: np.ndarray = None) -> np.ndarray:
    """(..., num_ctrl, 2) control points -> (..., num_out, 2) curve samples."""
    basis = build_basis() if basis is None else basis
    cp = np.asarray(control_points, dtype=float)
    if cp.shape[-2] != basis.shape[1]:
        raise ShapeMismatchError(f"expected {basis.shape[1]} control points, got {cp.shape[-2]}")
    return np.matmul(basis, cp)


def interpolate_backward(grad_out: np.ndarray, basis: np.ndarray = None) -> np.ndarray:
    """Gradient w.r.t. control points given the gradient w.r.t. curve samples."""
    basis = build_basis() if basis is None else basis
    return np.matmul(basis.T, grad_out)
