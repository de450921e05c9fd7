# /src/airsq/prediction/anchors.py

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Sequence, Tuple, Union

import numpy as np

from airsq.data.geometry import to_ego
from airsq.data.scenarios import (
    DEFAULT_MAX_STEP,
    FUTURE_STEPS,
    ObjectType,
    Scenario,
    Trajectory,
    ego_pose,
    filter_corrupt,
)
from airsq.errors import InsufficientDataError, InvariantError
from airsq.utils.io import read_json, write_json

logger = logging.getLogger(__name__)

DEFAULT_K = {ObjectType.VEHICLE: 32, ObjectType.PEDESTRIAN: 8, ObjectType.CYCLIST: 30}
SENTINEL = 1.0e4  # meters; padded centroids sit far outside any scene


@dataclass(frozen=True, eq=False)
class AnchorSet:
    type: ObjectType
    centroids: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        centroids = np.array(self.centroids, dtype=float, copy=True)
        counts = np.array(self.counts, dtype=np.int64, copy=True)
        if centroids.ndim != 3 or centroids.shape[1:] != (FUTURE_STEPS, 2) or centroids.shape[0] < 1:
            raise InvariantError("centroids", f"expected K x {FUTURE_STEPS} x 2, got {centroids.shape}")
        if not np.all(np.isfinite(centroids)):
            raise InvariantError("centroids", "non-finite centroid coordinate")
        if counts.shape != (centroids.shape[0],):
            raise InvariantError("counts", "one count per centroid")
        centroids.setflags(write=False)
        counts.setflags(write=False)
        object.__setattr__(self, "centroids", centroids)
        object.__setattr__(self, "counts", counts)

    @property
    def K(self) -> int:
        return int(self.centroids.shape[0])

    def padded(self, k_max: int) -> Tuple[np.ndarray, np.ndarray]:
        """Centroids padded to `k_max` with sentinel rows, plus the real-mode mask."""
        if k_max < self.K:
            raise InvariantError("K", f"cannot pad {self.K} anchors down to {k_max}")
        out = np.full((k_max, FUTURE_STEPS, 2), SENTINEL)
        out[: self.K] = self.centroids
        mask = np.zeros(k_max, dtype=bool)
        mask[: self.K] = True
        return out, mask

    def to_json(self) -> dict:
        return {
            "type": self.type.value,
            "K": self.K,
            "centroids": self.centroids.tolist(),
            "counts": self.counts.tolist(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "AnchorSet":
        anchors = cls(type=ObjectType(obj["type"]), centroids=obj["centroids"], counts=obj["counts"])
        if anchors.K != int(obj["K"]):
            raise InvariantError("K", f"header says {obj['K']} but file holds {anchors.K} centroids")
        return anchors


@dataclass
class KMeansResult:
    anchors: AnchorSet
    labels: np.ndarray
    inertia_history: List[float] = field(default_factory=list)
    iterations: int = 0


# -------------------------
# Distances
# -------------------------
def _stack(trajectories: Sequence[Trajectory]) -> Tuple[np.ndarray, np.ndarray]:
    points = np.stack([t.points for t in trajectories]) if trajectories else np.zeros((0, FUTURE_STEPS, 2))
    valid = np.stack([t.valid for t in trajectories]) if trajectories else np.zeros((0, FUTURE_STEPS), bool)
    return points, valid


def _masked_distances(points: np.ndarray, valid: np.ndarray, centroid: np.ndarray) -> np.ndarray:
    """Masked mean squared distance of N trajectories to one fully-valid path, shape (N,)."""
    sq = ((points - centroid[None]) ** 2).sum(axis=-1)
    count = valid.sum(axis=-1)
    if np.any(count == 0):
        raise InvariantError("valid", "trajectory has no valid steps to compare")
    return np.where(valid, sq, 0.0).sum(axis=-1) / count


def masked_distance(a: Trajectory, b: Trajectory) -> float:
    """Mean over jointly valid steps of the squared Euclidean distance."""
    both = a.valid & b.valid
    if not both.any():
        raise InvariantError("valid", "no jointly valid steps")
    return float(_masked_distances(a.points[None], both[None], b.points)[0])


def _distance_matrix(points: np.ndarray, valid: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    return np.stack([_masked_distances(points, valid, c) for c in centroids], axis=1)


def assign_anchor(trajectory: Trajectory, anchors: AnchorSet) -> int:
    """Index of the nearest centroid; ties go to the lowest index."""
    d = _distance_matrix(trajectory.points[None], trajectory.valid[None], anchors.centroids)[0]
    return int(np.argmin(d))


def inertia(trajectories: Sequence[Trajectory], anchors: AnchorSet, labels: np.ndarray) -> float:
    points, valid = _stack(trajectories)
    total = 0.0
    for k in range(anchors.K):
        members = labels == k
        if members.any():
            total += float(_masked_distances(points[members], valid[members], anchors.centroids[k]).sum())
    return total


# -------------------------
# Masked K-Means
# -------------------------
def _fill_invalid(points: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """Interpolate a trajectory across its invalid steps so it can seed a centroid."""
    steps = np.arange(FUTURE_STEPS)
    idx = steps[valid]
    return np.column_stack([np.interp(steps, idx, points[valid, d]) for d in range(2)])


def _update(points: np.ndarray, valid: np.ndarray, labels: np.ndarray, previous: np.ndarray) -> np.ndarray:
    centroids = previous.copy()
    for k in range(previous.shape[0]):
        members = labels == k
        if not members.any():
            logger.warning("Cluster %d is empty; keeping its previous centroid", k)
            continue
        mask = valid[members]
        # invalid steps may hold NaN
        num = np.where(mask[..., None], points[members], 0.0).sum(axis=0)
        den = mask.sum(axis=0)
        has = den > 0
        centroids[k, has] = num[has] / den[has][:, None]
    return centroids


def kmeans_fit(
    trajectories: Sequence[Trajectory],
    K: int,
    iters: int = 50,
    seed: int = 0,
    object_type: ObjectType = ObjectType.VEHICLE,
) -> KMeansResult:
    """Lloyd iterations with availability-masked distances and per-step means."""
    n = len(trajectories)
    if K < 1:
        raise InvariantError("K", "K must be at least 1")
    if K > n:
        raise InsufficientDataError(object_type, K, n)
    points, valid = _stack(trajectories)
    if np.any(valid.sum(axis=1) == 0):
        raise InvariantError("valid", "every trajectory needs at least one valid step")

    rng = np.random.default_rng(seed)
    init = np.sort(rng.choice(n, size=K, replace=False))
    centroids = np.stack([_fill_invalid(points[i], valid[i]) for i in init])

    labels = None
    history = []
    rounds = 0
    for rounds in range(1, iters + 1):
        new_labels = np.argmin(_distance_matrix(points, valid, centroids), axis=1)
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        centroids = _update(points, valid, labels, centroids)
        current = AnchorSet(type=object_type, centroids=centroids, counts=np.bincount(labels, minlength=K))
        history.append(inertia(trajectories, current, labels))
        logger.debug("k-means %s round %d: inertia %.6f", object_type.value, rounds, history[-1])

    if labels is None:
        labels = np.argmin(_distance_matrix(points, valid, centroids), axis=1)
    anchors = AnchorSet(type=object_type, centroids=centroids, counts=np.bincount(labels, minlength=K))
    return KMeansResult(anchors=anchors, labels=labels, inertia_history=history, iterations=rounds)


# -------------------------
# Per-type fitting
# -------------------------
def ego_futures(scenarios: Sequence[Scenario]) -> Dict[ObjectType, List[Trajectory]]:
    """Every agent's future in its own ego frame, grouped by object type."""
    groups: Dict[ObjectType, List[Trajectory]] = {t: [] for t in ObjectType}
    for scenario in scenarios:
        for agent in scenario.agents:
            if not agent.past.valid[-1] or not agent.future.valid.any():
                continue
            pose = ego_pose(agent)
            groups[agent.type].append(Trajectory(points=to_ego(agent.future.points, pose), valid=agent.future.valid))
    return groups


def fit_all_types(
    scenarios: Sequence[Scenario],
    k_per_type: Mapping[ObjectType, int] = None,
    iters: int = 50,
    seed: int = 0,
    max_step: float = DEFAULT_MAX_STEP,
) -> Dict[ObjectType, AnchorSet]:
    ks = dict(DEFAULT_K)
    ks.update(k_per_type or {})
    groups = ego_futures(scenarios)
    fitted = {}
    for obj_type in ObjectType:
        clean = filter_corrupt(groups[obj_type], max_step)
        if len(clean) < ks[obj_type]:
            raise InsufficientDataError(obj_type, ks[obj_type], len(clean))
        result = kmeans_fit(clean, ks[obj_type], iters=iters, seed=seed, object_type=obj_type)
        logger.info(
            "Fitted %d %s anchors on %d trajectories in %d rounds",
            ks[obj_type], obj_type.value, len(clean), result.iterations,
        )
        fitted[obj_type] = result.anchors
    return fitted


def assign_pair(scenario: Scenario, anchors: Mapping[ObjectType, AnchorSet]) -> Tuple[int, int]:
    """(i*, j*): each pair agent's ground truth, in its own ego frame, against its type's anchors."""
    out = []
    for slot in (0, 1):
        agent = scenario.pair_agent(slot)
        ego = Trajectory(points=to_ego(agent.future.points, ego_pose(agent)), valid=agent.future.valid)
        out.append(assign_anchor(ego, anchors[agent.type]))
    return out[0], out[1]


def save_anchor_sets(anchor_sets: Mapping[ObjectType, AnchorSet], directory: Union[str, Path]) -> None:
    directory = Path(directory)
    for obj_type, anchors in anchor_sets.items():
        write_json(directory / f"{obj_type.value}.json", anchors.to_json())
    logger.info("Wrote %d anchor sets to %s", len(anchor_sets), directory)


def load_anchor_sets(directory: Union[str, Path]) -> Dict[ObjectType, AnchorSet]:
    directory = Path(directory)
    return {t: AnchorSet.from_json(read_json(directory / f"{t.value}.json")) for t in ObjectType}
