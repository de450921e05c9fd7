# /src/airsq/prediction/model.py

import json
import logging
from dataclasses import dataclass
from typing import List, Mapping, Optional, Sequence, Tuple

import numpy as np

from airsq.data.geometry import Pose, rotate_vectors, to_ego, to_world, wrap_angle
from airsq.data.scenarios import ObjectType, PastStates, Scenario, Trajectory, ego_pose
from airsq.errors import DivergenceError, InvariantError, ScenarioFormatError, ShapeMismatchError
from airsq.prediction.anchors import AnchorSet, assign_pair
from airsq.prediction.layers import (
    avg_pool_backward,
    avg_pool_forward,
    conv2d_backward,
    conv2d_forward,
    linear_backward,
    linear_forward,
    masked_softmax,
    relu,
    relu_backward,
    softmax_backward,
)
from airsq.prediction.loss import (
    LossBreakdown,
    LossWeights,
    interaction_loss,
    loss_gradients,
    marginal_classification_gradient,
    marginal_classification_loss,
    regression_gradient,
    regression_loss,
    total_loss,
)
from airsq.prediction.params import ModelConfig, ModelParams
from airsq.prediction.raster import RasterConfig, rasterize, rerasterize
from airsq.prediction.spline import build_basis, interpolate, interpolate_backward
from airsq.utils.io import atomic_write_text, dump_json

logger = logging.getLogger(__name__)

REPRESENTATIONS = ("plain", "rerasterized")


# -------------------------
# Prediction types
# -------------------------
@dataclass(frozen=True, eq=False)
class MarginalPrediction:
    """K world-frame mode trajectories and their confidences; padded modes have probability 0."""

    trajectories: np.ndarray
    confidences: np.ndarray
    mask: np.ndarray

    @property
    def K(self) -> int:
        return int(self.confidences.shape[0])

    def top1(self) -> Trajectory:
        return Trajectory.fully_valid(self.trajectories[int(np.argmax(self.confidences))])

    def to_json(self) -> dict:
        return {
            "trajectories": self.trajectories.tolist(),
            "confidences": self.confidences.tolist(),
            "mask": self.mask.tolist(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "MarginalPrediction":
        return cls(
            trajectories=np.asarray(obj["trajectories"], dtype=float),
            confidences=np.asarray(obj["confidences"], dtype=float),
            mask=np.asarray(obj["mask"], dtype=bool),
        )


@dataclass(frozen=True, eq=False)
class JointPrediction:
    """K x K joint grid (rows: agent-0 anchors) over the cartesian product of two marginals."""

    grid: np.ndarray
    marginal0: MarginalPrediction
    marginal1: MarginalPrediction
    types: Tuple[str, str] = ("vehicle", "vehicle")

    @property
    def K(self) -> int:
        return int(self.grid.shape[0])

    def pair(self, i: int, j: int) -> Tuple[np.ndarray, np.ndarray]:
        return self.marginal0.trajectories[i], self.marginal1.trajectories[j]

    def swapped(self) -> "JointPrediction":
        return JointPrediction(
            grid=self.grid.T.copy(),
            marginal0=self.marginal1,
            marginal1=self.marginal0,
            types=(self.types[1], self.types[0]),
        )

    def to_json(self) -> dict:
        return {
            "grid": self.grid.tolist(),
            "marginals": [self.marginal0.to_json(), self.marginal1.to_json()],
            "types": list(self.types),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "JointPrediction":
        m0, m1 = (MarginalPrediction.from_json(m) for m in obj["marginals"])
        return cls(grid=np.asarray(obj["grid"], dtype=float), marginal0=m0, marginal1=m1, types=tuple(obj["types"]))


@dataclass
class Example:
    """One scenario turned into model inputs and supervision, indexed by pair slot."""

    images: List[np.ndarray]
    past: List[np.ndarray]
    types: Tuple[ObjectType, ObjectType]
    is_sdc: Tuple[bool, bool]
    poses: Tuple[Pose, Pose]
    centroids: Tuple[np.ndarray, np.ndarray]
    masks: Tuple[np.ndarray, np.ndarray]
    truths: Tuple[Trajectory, Trajectory]
    assignment: Tuple[int, int]


# -------------------------
# Inputs
# -------------------------
def past_features(past: PastStates, pose: Pose) -> np.ndarray:
    """Ego-frame history: positions and velocities (tens of meters), relative headings, validity."""
    states = past.states
    live = past.valid[:, None]
    pos = np.where(live, to_ego(states[:, :2], pose) / 10.0, 0.0)
    vel = np.where(live, rotate_vectors(states[:, 2:4], -pose.heading) / 10.0, 0.0)
    heading = np.where(past.valid, wrap_angle(states[:, 4] - pose.heading), 0.0)
    return np.concatenate([pos.ravel(), vel.ravel(), heading, past.valid.astype(float)])


def model_raster_config(config: ModelConfig, base: RasterConfig = None) -> RasterConfig:
    """Downscale `base` (full 224x448 canvas by default) to the extractor input size."""
    base = base or RasterConfig()
    factor = base.height // config.input_height
    scaled = base.scaled(factor) if factor > 1 else base
    if (scaled.height, scaled.width) != (config.input_height, config.input_width):
        raise ShapeMismatchError(
            f"raster {base.height}x{base.width} does not downscale to {config.input_height}x{config.input_width}"
        )
    return scaled


def _padded_anchors(anchors: AnchorSet, obj_type: ObjectType, k_max: int) -> Tuple[np.ndarray, np.ndarray]:
    if anchors.type != obj_type:
        raise InvariantError("anchors", f"{obj_type.value} agent given {anchors.type.value} anchors")
    return anchors.padded(k_max)


def prepare_example(
    scenario: Scenario,
    anchors: Mapping[ObjectType, AnchorSet],
    params: ModelParams,
    raster_config: RasterConfig = None,
    representation: str = "plain",
    partner_predictions: Optional[Sequence[Trajectory]] = None,
) -> Example:
    """
    Render both pair agents' images and collect supervision.

    With `representation="rerasterized"`, `partner_predictions[slot]` is the top-1 future of the
    agent in `slot`; it is drawn into the other agent's image.
    """
    if representation not in REPRESENTATIONS:
        raise InvariantError("representation", f"expected one of {REPRESENTATIONS}, got {representation!r}")
    cfg = params.config
    raster = model_raster_config(cfg, raster_config)
    agents = [scenario.pair_agent(s) for s in (0, 1)]
    poses = tuple(ego_pose(a) for a in agents)
    images = []
    for slot in (0, 1):
        if representation == "rerasterized":
            if partner_predictions is None:
                raise InvariantError("partner_predictions", "rerasterized inputs need the partner's prediction")
            images.append(rerasterize(scenario, slot, partner_predictions[1 - slot], raster))
        else:
            images.append(rasterize(scenario, slot, raster))
    padded = [_padded_anchors(anchors[a.type], a.type, cfg.k_max) for a in agents]
    return Example(
        images=images,
        past=[past_features(a.past, p) for a, p in zip(agents, poses)],
        types=(agents[0].type, agents[1].type),
        is_sdc=(agents[0].is_sdc, agents[1].is_sdc),
        poses=poses,
        centroids=(padded[0][0], padded[1][0]),
        masks=(padded[0][1], padded[1][1]),
        truths=(agents[0].future, agents[1].future),
        assignment=assign_pair(scenario, anchors),
    )


# -------------------------
# Feature extractor
# -------------------------
def _extract(image: np.ndarray, params: ModelParams):
    cfg = params.config
    x = np.asarray(image)
    x = x.astype(float) / 255.0 if x.dtype == np.uint8 else x.astype(float)
    if x.shape != (cfg.input_height, cfg.input_width, 3):
        raise ShapeMismatchError(f"image {x.shape} does not match {(cfg.input_height, cfg.input_width, 3)}")
    layers = []
    for i in range(len(cfg.channels)):
        pre, cols = conv2d_forward(x, params[f"extractor.conv{i}.weight"], params[f"extractor.conv{i}.bias"])
        layers.append((x.shape, cols, pre))
        x = relu(pre)
    return avg_pool_forward(x), (layers, x.shape)


def _extract_backward(d_emb: np.ndarray, cache, params: ModelParams, grads: ModelParams) -> None:
    layers, out_shape = cache
    dx = avg_pool_backward(d_emb, out_shape)
    for i in reversed(range(len(layers))):
        in_shape, cols, pre = layers[i]
        dpre = relu_backward(dx, pre)
        dx, dW, db = conv2d_backward(dpre, cols, params[f"extractor.conv{i}.weight"], in_shape, need_dx=i > 0)
        grads[f"extractor.conv{i}.weight"] += dW
        grads[f"extractor.conv{i}.bias"] += db


def feature_extract(image: np.ndarray, params: ModelParams) -> np.ndarray:
    """Conv stack (3x3, stride 2, ReLU) and global average pooling -> embedding of size E."""
    return _extract(image, params)[0]


# -------------------------
# Marginal model
# -------------------------
@dataclass
class _MarginalCache:
    emb: np.ndarray
    h_pre: np.ndarray
    h: np.ndarray
    past: np.ndarray
    g_pre: np.ndarray
    z_pre: np.ndarray
    z: np.ndarray
    confidences: np.ndarray
    head: str
    heading: float


def _marginal(embedding, past_feats, obj_type: ObjectType, centroids, mask, pose: Pose, params: ModelParams):
    cfg = params.config
    if centroids.shape[0] != cfg.k_max:
        raise ShapeMismatchError(f"expected {cfg.k_max} padded anchors, got {centroids.shape[0]}")
    h_pre = linear_forward(embedding, params["trunk.weight"], params["trunk.bias"])
    h = relu(h_pre)
    head = f"head.{obj_type.value}"
    g_pre = linear_forward(past_feats, params[f"{head}.past.weight"], params[f"{head}.past.bias"])
    z_pre = linear_forward(h, params[f"{head}.fc.weight"], params[f"{head}.fc.bias"]) + relu(g_pre)
    z = relu(z_pre)
    out = linear_forward(z, params[f"{head}.out.weight"], params[f"{head}.out.bias"])

    n_res = cfg.k_max * cfg.num_ctrl * 2
    residual = out[:n_res].reshape(cfg.k_max, cfg.num_ctrl, 2)
    ego = interpolate(residual, build_basis(num_ctrl=cfg.num_ctrl)) + centroids
    confidences = masked_softmax(out[n_res:], mask)
    prediction = MarginalPrediction(trajectories=to_world(ego, pose), confidences=confidences, mask=np.asarray(mask))
    cache = _MarginalCache(embedding, h_pre, h, past_feats, g_pre, z_pre, z, confidences, head, pose.heading)
    return prediction, cache


def _marginal_backward(d_traj, d_conf, d_h_extra, cache: _MarginalCache, params: ModelParams, grads: ModelParams):
    """Accumulates parameter gradients; returns d(loss)/d(embedding)."""
    cfg = params.config
    head = cache.head
    d_logits = softmax_backward(d_conf, cache.confidences)
    d_ego = rotate_vectors(d_traj, -cache.heading)
    d_residual = interpolate_backward(d_ego, build_basis(num_ctrl=cfg.num_ctrl))
    d_out = np.concatenate([d_residual.ravel(), d_logits])

    dz, dW, db = linear_backward(d_out, cache.z, params[f"{head}.out.weight"])
    grads[f"{head}.out.weight"] += dW
    grads[f"{head}.out.bias"] += db
    dz_pre = relu_backward(dz, cache.z_pre)

    dh, dW, db = linear_backward(dz_pre, cache.h, params[f"{head}.fc.weight"])
    grads[f"{head}.fc.weight"] += dW
    grads[f"{head}.fc.bias"] += db

    dg_pre = relu_backward(dz_pre, cache.g_pre)
    _, dW, db = linear_backward(dg_pre, cache.past, params[f"{head}.past.weight"])
    grads[f"{head}.past.weight"] += dW
    grads[f"{head}.past.bias"] += db

    if d_h_extra is not None:
        dh = dh + d_h_extra
    dh_pre = relu_backward(dh, cache.h_pre)
    d_emb, dW, db = linear_backward(dh_pre, cache.emb, params["trunk.weight"])
    grads["trunk.weight"] += dW
    grads["trunk.bias"] += db
    return d_emb


def marginal_forward(
    embedding: np.ndarray,
    past: PastStates,
    obj_type: ObjectType,
    is_sdc: bool,
    anchors: AnchorSet,
    pose: Pose,
    params: ModelParams,
) -> Tuple[MarginalPrediction, np.ndarray]:
    """
    Shared trunk, then the `obj_type` expert head: control-point residuals and logits.

    Residuals are splined and added to the anchor centroids in the ego frame, then moved to
    the world frame. Returns the prediction and the trunk activation used by the joint head.
    `is_sdc` only matters for the joint head.
    """
    centroids, mask = _padded_anchors(anchors, obj_type, params.config.k_max)
    prediction, cache = _marginal(embedding, past_features(past, pose), obj_type, centroids, mask, pose, params)
    return prediction, cache.h


# -------------------------
# Joint head
# -------------------------
def _joint_head_name(obj_type: ObjectType, is_sdc: bool) -> str:
    return "joint.head.sdc" if is_sdc else f"joint.head.{obj_type.value}"


def _joint(embeddings, types, is_sdc, masks, params: ModelParams):
    k = params.config.k_max
    grids, caches = [], []
    for a in (0, 1):
        b = 1 - a
        u = np.concatenate([embeddings[a], embeddings[b]])
        q_pre = linear_forward(u, params["joint.trunk.weight"], params["joint.trunk.bias"])
        q = relu(q_pre)
        head = _joint_head_name(types[a], is_sdc[a])
        logits = linear_forward(q, params[f"{head}.weight"], params[f"{head}.bias"])
        cell_mask = np.outer(masks[a], masks[b]).ravel()
        p = masked_softmax(logits, cell_mask)
        grids.append(p.reshape(k, k))
        caches.append((u, q_pre, q, head, p))
    final = (grids[0] + grids[1].T) / 2.0
    return final, caches


def _joint_backward(d_grid: np.ndarray, caches, params: ModelParams, grads: ModelParams):
    """Returns d(loss)/d(embedding) for slots 0 and 1."""
    d_per = [d_grid / 2.0, d_grid.T / 2.0]
    d = params.config.trunk_dim
    d_emb = [np.zeros(d), np.zeros(d)]
    for a in (0, 1):
        u, q_pre, q, head, p = caches[a]
        d_logits = softmax_backward(d_per[a].ravel(), p)
        dq, dW, db = linear_backward(d_logits, q, params[f"{head}.weight"])
        grads[f"{head}.weight"] += dW
        grads[f"{head}.bias"] += db
        dq_pre = relu_backward(dq, q_pre)
        du, dW, db = linear_backward(dq_pre, u, params["joint.trunk.weight"])
        grads["joint.trunk.weight"] += dW
        grads["joint.trunk.bias"] += db
        d_emb[a] += du[:d]
        d_emb[1 - a] += du[d:]
    return d_emb


def joint_forward(
    embeddings: Sequence[np.ndarray],
    types: Sequence[ObjectType],
    is_sdc: Sequence[bool],
    params: ModelParams,
    masks: Optional[Sequence[np.ndarray]] = None,
) -> np.ndarray:
    """
    Each slot scores the K x K grid from its own perspective (rows = its own anchors); the final
    grid averages slot 0's grid with the transpose of slot 1's.
    """
    k = params.config.k_max
    masks = masks if masks is not None else (np.ones(k, bool), np.ones(k, bool))
    return _joint(embeddings, types, is_sdc, masks, params)[0]


def independent_product(marginal0: MarginalPrediction, marginal1: MarginalPrediction, types=("vehicle", "vehicle")) -> JointPrediction:
    """Baseline: joint confidence of (i, j) is the product of the marginal confidences."""
    return JointPrediction(
        grid=np.outer(marginal0.confidences, marginal1.confidences),
        marginal0=marginal0,
        marginal1=marginal1,
        types=tuple(types),
    )


# -------------------------
# Whole-example passes
# -------------------------
def forward_example(example: Example, params: ModelParams, joint: str = "learned"):
    embeddings, extract_caches, marginals, marginal_caches = [], [], [], []
    for slot in (0, 1):
        emb, ecache = _extract(example.images[slot], params)
        pred, mcache = _marginal(
            emb, example.past[slot], example.types[slot],
            example.centroids[slot], example.masks[slot], example.poses[slot], params,
        )
        embeddings.append(mcache.h)
        extract_caches.append(ecache)
        marginals.append(pred)
        marginal_caches.append(mcache)
    types = (example.types[0].value, example.types[1].value)
    if joint == "product":
        return independent_product(marginals[0], marginals[1], types), None
    grid, joint_caches = _joint(embeddings, example.types, example.is_sdc, example.masks, params)
    prediction = JointPrediction(grid=grid, marginal0=marginals[0], marginal1=marginals[1], types=types)
    return prediction, (extract_caches, marginal_caches, joint_caches)


def example_loss(example: Example, prediction: JointPrediction, weights: LossWeights, phase: str = "joint") -> LossBreakdown:
    t0, t1 = example.truths
    m0, m1 = prediction.marginal0, prediction.marginal1
    if phase == "marginal":
        i, j = example.assignment
        reg0, reg1 = regression_loss(m0.trajectories, m1.trajectories, t0, t1, example.assignment)
        cls = marginal_classification_loss(m0.confidences, i) + marginal_classification_loss(m1.confidences, j)
        return total_loss(cls, 0.0, reg0, reg1, weights)
    return interaction_loss(prediction.grid, m0.trajectories, m1.trajectories, t0, t1, example.assignment, weights)


def backward_example(
    example: Example,
    params: ModelParams,
    weights: LossWeights,
    grads: ModelParams,
    phase: str = "joint",
    joint_only: bool = False,
) -> LossBreakdown:
    """Forward, loss, and exact reverse-mode gradients accumulated into `grads`."""
    prediction, caches = forward_example(example, params)
    extract_caches, marginal_caches, joint_caches = caches
    breakdown = example_loss(example, prediction, weights, phase)
    t0, t1 = example.truths
    i, j = example.assignment
    m0, m1 = prediction.marginal0, prediction.marginal1

    if phase == "marginal":
        d_traj = [weights.w_reg * regression_gradient(m0.trajectories, t0, i),
                  weights.w_reg * regression_gradient(m1.trajectories, t1, j)]
        d_conf = [weights.w_cls * marginal_classification_gradient(m0.confidences, i),
                  weights.w_cls * marginal_classification_gradient(m1.confidences, j)]
        d_h = [None, None]
    else:
        d_grid, d0, d1 = loss_gradients(prediction.grid, m0.trajectories, m1.trajectories, t0, t1, (i, j), weights)
        d_h = _joint_backward(d_grid, joint_caches, params, grads)
        if joint_only:
            return breakdown
        d_traj = [d0, d1]
        d_conf = [np.zeros(params.config.k_max), np.zeros(params.config.k_max)]

    for slot in (0, 1):
        d_emb = _marginal_backward(d_traj[slot], d_conf[slot], d_h[slot], marginal_caches[slot], params, grads)
        _extract_backward(d_emb, extract_caches[slot], params, grads)
    return breakdown


def mean_breakdown(parts: Sequence[LossBreakdown]) -> LossBreakdown:
    n = len(parts)
    return LossBreakdown(*(sum(getattr(p, f) for p in parts) / n for f in ("total", "cls", "marginal", "reg0", "reg1")))


def backward(
    batch: Sequence[Example],
    params: ModelParams,
    weights: LossWeights,
    phase: str = "joint",
    joint_only: bool = False,
) -> Tuple[ModelParams, LossBreakdown]:
    """Gradient of the batch-mean loss; examples are reduced in batch order."""
    if not batch:
        raise InvariantError("batch", "batch must be non-empty")
    grads = params.zeros_like()
    parts = [backward_example(ex, params, weights, grads, phase, joint_only) for ex in batch]
    mean = mean_breakdown(parts)
    if not np.isfinite(mean.total):
        raise DivergenceError(-1, mean)
    scale = 1.0 / len(batch)
    return grads.map(lambda _, g: g * scale), mean


def batch_loss(batch: Sequence[Example], params: ModelParams, weights: LossWeights, phase: str = "joint") -> LossBreakdown:
    return mean_breakdown([example_loss(ex, forward_example(ex, params)[0], weights, phase) for ex in batch])


# -------------------------
# Inference
# -------------------------
def predict_marginals(scenario: Scenario, anchors: Mapping[ObjectType, AnchorSet], params: ModelParams,
                      raster_config: RasterConfig = None) -> Tuple[MarginalPrediction, MarginalPrediction]:
    """Plain-raster marginal predictions for both pair slots."""
    example = prepare_example(scenario, anchors, params, raster_config, "plain")
    prediction, _ = forward_example(example, params, joint="product")
    return prediction.marginal0, prediction.marginal1


def predict_joint(
    scenario: Scenario,
    anchors: Mapping[ObjectType, AnchorSet],
    params: ModelParams,
    raster_config: RasterConfig = None,
    representation: str = "plain",
    marginal_params: Optional[ModelParams] = None,
    joint: str = "learned",
) -> JointPrediction:
    """
    Render each pair agent's view, run the marginal model per agent, then the joint head.

    For rerasterized inputs the partner's top-1 future comes from `marginal_params` (defaults to
    `params`) run on plain rasters. `joint="product"` swaps in the independent-product grid.
    """
    partner = None
    if representation == "rerasterized":
        m0, m1 = predict_marginals(scenario, anchors, marginal_params or params, raster_config)
        partner = (m0.top1(), m1.top1())
    example = prepare_example(scenario, anchors, params, raster_config, representation, partner)
    return forward_example(example, params, joint=joint)[0]


def ensemble_models(predictions: Sequence[JointPrediction]) -> JointPrediction:
    """Element-wise mean of grids, mode trajectories and confidences across models."""
    if not predictions:
        raise InvariantError("predictions", "need at least one prediction to ensemble")
    k = predictions[0].K
    if any(p.K != k for p in predictions):
        raise ShapeMismatchError("all ensembled predictions must share K")

    def mean_marginal(slot: int) -> MarginalPrediction:
        ms = [p.marginal0 if slot == 0 else p.marginal1 for p in predictions]
        return MarginalPrediction(
            trajectories=np.mean([m.trajectories for m in ms], axis=0),
            confidences=np.mean([m.confidences for m in ms], axis=0),
            mask=ms[0].mask,
        )

    return JointPrediction(
        grid=np.mean([p.grid for p in predictions], axis=0),
        marginal0=mean_marginal(0),
        marginal1=mean_marginal(1),
        types=predictions[0].types,
    )


def save_predictions(predictions: Sequence[JointPrediction], path) -> None:
    """One JSON object per line, in scenario order."""
    atomic_write_text(path, "".join(dump_json(p.to_json()) + "\n" for p in predictions))
    logger.info("Wrote %d predictions to %s", len(predictions), path)


def load_predictions(path) -> List[JointPrediction]:
    predictions = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                predictions.append(JointPrediction.from_json(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                raise ScenarioFormatError(lineno, f"bad prediction record ({e})")
    return predictions
