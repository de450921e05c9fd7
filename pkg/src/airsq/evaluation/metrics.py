# /src/airsq/evaluation/metrics.py

import logging
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Mapping, NamedTuple, Sequence, Tuple

import numpy as np

from airsq.data.scenarios import FUTURE_STEPS, ObjectType, Scenario, Trajectory
from airsq.errors import ConfigError, InvariantError
from airsq.prediction.anchors import AnchorSet, assign_pair
from airsq.prediction.loss import LossWeights, classification_loss, regression_loss
from airsq.prediction.model import JointPrediction, independent_product

logger = logging.getLogger(__name__)


class JointTruth(NamedTuple):
    gt0: Trajectory
    gt1: Trajectory
    assignment: Tuple[int, int]


@dataclass(frozen=True)
class MapConfig:
    """Joint mAP settings: top-k cells per scenario and displacement gates (m) at 1-based steps."""

    top_k: int = 6
    steps: Tuple[int, ...] = (30, 50, 80)
    thresholds: Tuple[float, ...] = (2.0, 3.6, 6.0)

    def __post_init__(self):
        if len(self.steps) != len(self.thresholds):
            raise ConfigError("one threshold per measurement step")
        if any(t <= 0 for t in self.thresholds):
            raise ConfigError("thresholds must be positive")
        if any(not 1 <= s <= FUTURE_STEPS for s in self.steps):
            raise ConfigError(f"measurement steps must lie in 1..{FUTURE_STEPS}")
        if self.top_k < 1:
            raise ConfigError("top_k must be at least 1")

    def to_json(self) -> dict:
        return {"top_k": self.top_k, "steps": list(self.steps), "thresholds": list(self.thresholds)}

    @classmethod
    def from_json(cls, obj: dict) -> "MapConfig":
        unknown = set(obj) - {"top_k", "steps", "thresholds"}
        if unknown:
            raise ConfigError(f"unknown map config keys: {sorted(unknown)}")
        return cls(
            top_k=int(obj.get("top_k", 6)),
            steps=tuple(int(s) for s in obj.get("steps", (30, 50, 80))),
            thresholds=tuple(float(t) for t in obj.get("thresholds", (2.0, 3.6, 6.0))),
        )


@dataclass
class MapResult:
    mAP: float
    buckets: Dict[str, float] = field(default_factory=dict)
    counts: Dict[str, int] = field(default_factory=dict)

    def to_json(self) -> dict:
        return asdict(self)


# -------------------------
# mAP
# -------------------------
def bucket_of(prediction: JointPrediction) -> str:
    return "-".join(sorted(prediction.types))


def _agent_hit(pred: np.ndarray, gt: Trajectory, config: MapConfig) -> bool:
    checked = False
    for step, threshold in zip(config.steps, config.thresholds):
        t = step - 1
        if not gt.valid[t]:
            continue
        checked = True
        if np.hypot(*(pred[t] - gt.points[t])) > threshold:
            return False
    return checked


def _scenario_entries(prediction: JointPrediction, truth: JointTruth, config: MapConfig):
    """(confidence, is_tp) for the top-k cells; only the best-ranked hit is a true positive."""
    flat = prediction.grid.ravel()
    k1 = prediction.marginal1.K
    order = np.argsort(-flat, kind="stable")[: config.top_k]
    entries = []
    found = False
    for cell in order:
        i, j = divmod(int(cell), k1)
        p0, p1 = prediction.pair(i, j)
        hit = _agent_hit(p0, truth.gt0, config) and _agent_hit(p1, truth.gt1, config)
        entries.append((float(flat[cell]), hit and not found))
        found = found or hit
    return entries


def average_precision(entries: Sequence[Tuple[float, bool]], positives: int) -> float:
    """Area under the interpolated precision-recall curve of confidence-ranked entries."""
    if positives == 0 or not entries:
        return 0.0
    conf = np.array([e[0] for e in entries])
    tp = np.array([e[1] for e in entries], dtype=float)
    order = np.argsort(-conf, kind="stable")
    tp = tp[order]
    tps = np.cumsum(tp)
    fps = np.cumsum(1.0 - tp)
    precision = tps / (tps + fps)
    recall = tps / positives
    interpolated = np.maximum.accumulate(precision[::-1])[::-1]
    prev = np.concatenate([[0.0], recall[:-1]])
    return float(np.sum((recall - prev) * interpolated))


def joint_map(
    predictions: Sequence[JointPrediction],
    truths: Sequence[JointTruth],
    config: MapConfig = None,
) -> MapResult:
    """Pool top-k cells per object-type-pair bucket, AP per bucket, mean over buckets."""
    config = config or MapConfig()
    if not predictions:
        raise InvariantError("predictions", "cannot score an empty evaluation set")
    if len(predictions) != len(truths):
        raise InvariantError("truths", f"{len(predictions)} predictions but {len(truths)} truths")

    pooled: Dict[str, List[Tuple[float, bool]]] = {}
    counts: Dict[str, int] = {}
    for prediction, truth in zip(predictions, truths):
        key = bucket_of(prediction)
        pooled.setdefault(key, []).extend(_scenario_entries(prediction, truth, config))
        counts[key] = counts.get(key, 0) + 1

    buckets = {key: average_precision(pooled[key], counts[key]) for key in sorted(pooled)}
    return MapResult(mAP=float(np.mean(list(buckets.values()))), buckets=buckets, counts=dict(sorted(counts.items())))


# -------------------------
# Displacement metrics
# -------------------------
def _mode_errors(trajectories: np.ndarray, gt: Trajectory) -> np.ndarray:
    """(K, 80) Euclidean error of every mode against ground truth."""
    return np.hypot(*np.moveaxis(trajectories - gt.points[None], -1, 0))


def _final_step(gt: Trajectory) -> int:
    idx = np.flatnonzero(gt.valid)
    if idx.size == 0:
        raise InvariantError("valid", "ground truth has no valid step")
    return int(idx[-1])


def min_joint_ade(prediction: JointPrediction, truth: JointTruth) -> float:
    """Minimum over all grid cells of the two agents' mean displacement, averaged."""
    per_agent = []
    for m, gt in ((prediction.marginal0, truth.gt0), (prediction.marginal1, truth.gt1)):
        _final_step(gt)
        per_agent.append(_mode_errors(m.trajectories, gt)[:, gt.valid].mean(axis=1))
    return float(np.min((per_agent[0][:, None] + per_agent[1][None, :]) / 2.0))


def min_joint_fde(prediction: JointPrediction, truth: JointTruth) -> float:
    """As `min_joint_ade`, at each agent's last valid ground-truth step."""
    per_agent = []
    for m, gt in ((prediction.marginal0, truth.gt0), (prediction.marginal1, truth.gt1)):
        per_agent.append(_mode_errors(m.trajectories, gt)[:, _final_step(gt)])
    return float(np.min((per_agent[0][:, None] + per_agent[1][None, :]) / 2.0))


# -------------------------
# Loss averages over a set
# -------------------------
def mean_losses(predictions: Sequence[JointPrediction], truths: Sequence[JointTruth], weights: LossWeights) -> Dict[str, float]:
    cores, margs, regs = [], [], []
    for p, t in zip(predictions, truths):
        core, marginal = classification_loss(p.grid, t.assignment)
        reg0, reg1 = regression_loss(p.marginal0.trajectories, p.marginal1.trajectories, t.gt0, t.gt1, t.assignment)
        cores.append(core)
        margs.append(marginal)
        regs.append(reg0 + reg1)
    core, marg, reg = float(np.mean(cores)), float(np.mean(margs)), float(np.mean(regs))
    return {"cls_core": core, "marginal": marg, "L_cls": core + weights.w_m * marg, "L_reg": reg}


def evaluate(
    predictions: Sequence[JointPrediction],
    truths: Sequence[JointTruth],
    config: MapConfig = None,
    weights: LossWeights = None,
) -> dict:
    config = config or MapConfig()
    weights = weights or LossWeights()
    result = joint_map(predictions, truths, config)
    report = {
        "mAP": result.mAP,
        "buckets": result.buckets,
        "counts": result.counts,
        "minADE": float(np.mean([min_joint_ade(p, t) for p, t in zip(predictions, truths)])),
        "minFDE": float(np.mean([min_joint_fde(p, t) for p, t in zip(predictions, truths)])),
        **mean_losses(predictions, truths, weights),
    }
    logger.info("Evaluated %d scenarios: mAP %.4f", len(predictions), result.mAP)
    return report


def joint_truth(scenario: Scenario, anchors: Mapping[ObjectType, AnchorSet]) -> JointTruth:
    """Ground-truth futures of the pair and their nearest-anchor cell."""
    return JointTruth(
        gt0=scenario.pair_agent(0).future,
        gt1=scenario.pair_agent(1).future,
        assignment=assign_pair(scenario, anchors),
    )


def compare_baseline(
    predictions: Sequence[JointPrediction],
    truths: Sequence[JointTruth],
    config: MapConfig = None,
    weights: LossWeights = None,
) -> dict:
    """Score the same marginal outputs with the independent-product grid instead of the learned one."""
    config = config or MapConfig()
    weights = weights or LossWeights()
    baseline = [independent_product(p.marginal0, p.marginal1, p.types) for p in predictions]
    learned_map = joint_map(predictions, truths, config).mAP
    base_map = joint_map(baseline, truths, config).mAP
    return {
        "baseline_mAP": base_map,
        "baseline_L_cls": mean_losses(baseline, truths, weights)["L_cls"],
        "relative_gain": (learned_map - base_map) / base_map if base_map > 0 else None,
    }
