# /src/airsq/prediction/loss.py

import math
from dataclasses import asdict, dataclass
from typing import Tuple

import numpy as np

from airsq.data.scenarios import Trajectory
from airsq.errors import DivergenceError, InvariantError

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class LossWeights:
    w_reg: float = 1.0
    w_cls: float = 60.0
    w_m: float = 1.0

    def __post_init__(self):
        for name in ("w_reg", "w_cls", "w_m"):
            value = getattr(self, name)
            if not (value >= 0 and math.isfinite(value)):
                raise InvariantError(name, f"loss weight must be finite and >= 0, got {value}")

    def to_json(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class LossBreakdown:
    total: float
    cls: float
    marginal: float
    reg0: float
    reg1: float

    def to_json(self) -> dict:
        return asdict(self)

    @property
    def reg(self) -> float:
        return self.reg0 + self.reg1


def _neg_log(p: float) -> float:
    return -math.log(max(float(p), PROB_FLOOR))


def _neg_log_grad(p: float) -> float:
    return -1.0 / p if p > PROB_FLOOR else 0.0


# -------------------------
# Components
# -------------------------
def classification_loss(grid: np.ndarray, assignment: Tuple[int, int]) -> Tuple[float, float]:
    """(cls_core, marginal): -log p[i*, j*] and -log row(i*) - log col(j*)."""
    i, j = assignment
    core = _neg_log(grid[i, j])
    marginal = _neg_log(grid[i, :].sum()) + _neg_log(grid[:, j].sum())
    return core, marginal


def regression_loss(
    pred0: np.ndarray,
    pred1: np.ndarray,
    gt0: Trajectory,
    gt1: Trajectory,
    assignment: Tuple[int, int],
) -> Tuple[float, float]:
    """Half the summed squared error of the assigned modes over valid ground-truth steps."""
    out = []
    for pred, gt, k in ((pred0, gt0, assignment[0]), (pred1, gt1, assignment[1])):
        err = pred[k] - gt.points
        out.append(0.5 * float(np.sum(np.where(gt.valid[:, None], err * err, 0.0))))
    return out[0], out[1]


def marginal_classification_loss(confidences: np.ndarray, index: int) -> float:
    """Single-agent -log q[k], used while pretraining the marginal model."""
    return _neg_log(confidences[index])


def total_loss(cls_core: float, marginal: float, reg0: float, reg1: float, weights: LossWeights) -> LossBreakdown:
    components = (cls_core, marginal, reg0, reg1)
    if not all(math.isfinite(c) for c in components):
        raise DivergenceError(-1, components)
    total = weights.w_reg * (reg0 + reg1) + weights.w_cls * (cls_core + weights.w_m * marginal)
    return LossBreakdown(total=total, cls=cls_core, marginal=marginal, reg0=reg0, reg1=reg1)


def interaction_loss(grid, pred0, pred1, gt0, gt1, assignment, weights: LossWeights) -> LossBreakdown:
    core, marginal = classification_loss(grid, assignment)
    reg0, reg1 = regression_loss(pred0, pred1, gt0, gt1, assignment)
    return total_loss(core, marginal, reg0, reg1, weights)


# -------------------------
# Gradients
# -------------------------
def classification_gradient(grid: np.ndarray, assignment: Tuple[int, int], w_m: float) -> np.ndarray:
    """d(cls_core + w_m * marginal) / d grid."""
    i, j = assignment
    d = np.zeros_like(grid, dtype=float)
    d[i, j] += _neg_log_grad(grid[i, j])
    if w_m:
        d[i, :] += w_m * _neg_log_grad(grid[i, :].sum())
        d[:, j] += w_m * _neg_log_grad(grid[:, j].sum())
    return d


def regression_gradient(pred: np.ndarray, gt: Trajectory, index: int) -> np.ndarray:
    """d reg / d pred: only the assigned mode at valid steps is non-zero."""
    d = np.zeros_like(pred, dtype=float)
    d[index] = np.where(gt.valid[:, None], pred[index] - gt.points, 0.0)
    return d


def loss_gradients(
    grid: np.ndarray,
    pred0: np.ndarray,
    pred1: np.ndarray,
    gt0: Trajectory,
    gt1: Trajectory,
    assignment: Tuple[int, int],
    weights: LossWeights,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of the weighted total w.r.t. the grid and both agents' mode trajectories."""
    d_grid = weights.w_cls * classification_gradient(grid, assignment, weights.w_m)
    d0 = weights.w_reg * regression_gradient(pred0, gt0, assignment[0])
    d1 = weights.w_reg * regression_gradient(pred1, gt1, assignment[1])
    return d_grid, d0, d1


def marginal_classification_gradient(confidences: np.ndarray, index: int) -> np.ndarray:
    d = np.zeros_like(confidences, dtype=float)
    d[index] = _neg_log_grad(confidences[index])
    return d
