# /src/airsq/evaluation/sensitivity.py

import logging
from dataclasses import asdict, dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from airsq.data.scenarios import Trajectory
from airsq.errors import InvariantError, UndefinedRatioError
from airsq.evaluation.metrics import JointTruth, MapConfig, joint_map, mean_losses
from airsq.prediction.loss import LossWeights
from airsq.prediction.model import JointPrediction, MarginalPrediction

logger = logging.getLogger(__name__)

DEFAULT_ALPHA = 0.1


def _check_alpha(alpha: float) -> None:
    if not 0.0 <= alpha <= 1.0:
        raise InvariantError("alpha", f"alpha must lie in [0, 1], got {alpha}")


def reveal_confidences(grid: np.ndarray, assignment: Tuple[int, int], alpha: float) -> np.ndarray:
    """(1 - alpha) * grid + alpha * one-hot(i*, j*)."""
    _check_alpha(alpha)
    target = np.zeros_like(grid, dtype=float)
    target[assignment] = 1.0
    return (1.0 - alpha) * grid + alpha * target


def _blend(marginal: MarginalPrediction, gt: Trajectory, index: int, alpha: float) -> MarginalPrediction:
    trajectories = marginal.trajectories.copy()
    # an exact mode stays bitwise exact
    blended = trajectories[index] + alpha * (gt.points - trajectories[index])
    trajectories[index] = np.where(gt.valid[:, None], blended, trajectories[index])
    return MarginalPrediction(trajectories=trajectories, confidences=marginal.confidences, mask=marginal.mask)


def reveal_trajectories(
    prediction: JointPrediction,
    truth: Tuple[Trajectory, Trajectory],
    assignment: Tuple[int, int],
    alpha: float,
) -> JointPrediction:
    """Pull only the assigned modes (i* for agent 0, j* for agent 1) toward ground truth at valid steps."""
    _check_alpha(alpha)
    gt0, gt1 = truth
    return JointPrediction(
        grid=prediction.grid,
        marginal0=_blend(prediction.marginal0, gt0, assignment[0], alpha),
        marginal1=_blend(prediction.marginal1, gt1, assignment[1], alpha),
        types=prediction.types,
    )


@dataclass
class SensitivityReport:
    alpha: float
    baseline_map: float
    baseline_cls: float
    baseline_reg: float
    revealed_conf_map: float
    revealed_conf_cls: float
    revealed_traj_map: float
    revealed_traj_reg: float
    ratio_cls: Optional[float]
    ratio_reg: Optional[float]
    recommended_w_cls: Optional[float] = None
    recommended_w_reg: Optional[float] = None

    @property
    def delta_cls(self) -> float:
        return self.baseline_cls - self.revealed_conf_cls

    @property
    def delta_reg(self) -> float:
        return self.baseline_reg - self.revealed_traj_reg

    def to_json(self) -> dict:
        out = asdict(self)
        out["delta_cls"] = self.delta_cls
        out["delta_reg"] = self.delta_reg
        return out


def _ratio(gain: float, drop: float, axis: str) -> Optional[float]:
    if drop == 0.0:
        logger.warning("Revealing %s did not change its loss; ratio undefined", axis)
        return None
    return gain / drop


def sensitivity_analysis(
    predictions: Sequence[JointPrediction],
    truths: Sequence[JointTruth],
    alpha: float = DEFAULT_ALPHA,
    weights: LossWeights = None,
    map_config: MapConfig = None,
) -> SensitivityReport:
    """
    mAP gained per unit of loss removed, for confidences and for trajectories separately.

    Losses are averaged over the set before the ratios are formed; top-k selection is re-run on
    the revealed grids.
    """
    if not predictions:
        raise InvariantError("predictions", "sensitivity analysis needs a non-empty set")
    if not alpha > 0:
        raise InvariantError("alpha", "alpha must be positive")
    _check_alpha(alpha)
    weights = weights or LossWeights()
    map_config = map_config or MapConfig()

    base_map = joint_map(predictions, truths, map_config).mAP
    base = mean_losses(predictions, truths, weights)

    conf_preds = [
        JointPrediction(grid=reveal_confidences(p.grid, t.assignment, alpha),
                        marginal0=p.marginal0, marginal1=p.marginal1, types=p.types)
        for p, t in zip(predictions, truths)
    ]
    conf_map = joint_map(conf_preds, truths, map_config).mAP
    conf_cls = mean_losses(conf_preds, truths, weights)["L_cls"]

    traj_preds = [reveal_trajectories(p, (t.gt0, t.gt1), t.assignment, alpha) for p, t in zip(predictions, truths)]
    traj_map = joint_map(traj_preds, truths, map_config).mAP
    traj_reg = mean_losses(traj_preds, truths, weights)["L_reg"]

    report = SensitivityReport(
        alpha=alpha,
        baseline_map=base_map,
        baseline_cls=base["L_cls"],
        baseline_reg=base["L_reg"],
        revealed_conf_map=conf_map,
        revealed_conf_cls=conf_cls,
        revealed_traj_map=traj_map,
        revealed_traj_reg=traj_reg,
        ratio_cls=_ratio(conf_map - base_map, base["L_cls"] - conf_cls, "confidences"),
        ratio_reg=_ratio(traj_map - base_map, base["L_reg"] - traj_reg, "trajectories"),
    )
    if report.ratio_cls and report.ratio_reg and report.ratio_cls > 0 and report.ratio_reg > 0:
        report.recommended_w_reg = 1.0
        report.recommended_w_cls = report.ratio_cls / report.ratio_reg
    return report


def recommend_weights(report: SensitivityReport, w_m: float = 1.0) -> LossWeights:
    """w_reg = 1 and w_cls = ratio_cls / ratio_reg."""
    if report.ratio_cls is None or not report.ratio_cls > 0:
        raise UndefinedRatioError(report, "classification")
    if report.ratio_reg is None or not report.ratio_reg > 0:
        raise UndefinedRatioError(report, "regression")
    return LossWeights(w_reg=1.0, w_cls=report.ratio_cls / report.ratio_reg, w_m=w_m)
