# /src/airsq/prediction/train.py

import logging
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np

from airsq.data.scenarios import ObjectType, Scenario, balanced_sample
from airsq.errors import ConfigError, DivergenceError
from airsq.prediction.anchors import AnchorSet
from airsq.prediction.loss import LossWeights
from airsq.prediction.model import (
    REPRESENTATIONS,
    Example,
    backward,
    predict_marginals,
    prepare_example,
)
from airsq.prediction.params import ModelParams, is_joint_parameter
from airsq.prediction.raster import RasterConfig

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 16
    marginal_epochs: int = 2
    joint_epochs: int = 4
    max_steps: Optional[int] = None  # caps the total across both phases
    freeze_marginal: bool = False
    balanced: bool = False
    snapshot_every: int = 0
    representation: str = "rerasterized"

    def __post_init__(self):
        if self.representation not in REPRESENTATIONS:
            raise ConfigError(f"representation must be one of {REPRESENTATIONS}, got {self.representation!r}")
        if self.batch_size < 1 or self.lr <= 0:
            raise ConfigError("batch_size must be >= 1 and lr > 0")

    def to_json(self) -> dict:
        return asdict(self)


class Adam:
    """Adam over the named tensors of a `ModelParams`; updates in place."""

    def __init__(self, params: ModelParams, config: TrainConfig):
        self.config = config
        self.t = 0
        self.m = params.zeros_like()
        self.v = params.zeros_like()

    def step(self, params: ModelParams, grads: ModelParams, names: Sequence[str]) -> None:
        c = self.config
        self.t += 1
        bias1 = 1.0 - c.beta1 ** self.t
        bias2 = 1.0 - c.beta2 ** self.t
        for name in names:
            g = grads[name]
            self.m[name] = c.beta1 * self.m[name] + (1.0 - c.beta1) * g
            self.v[name] = c.beta2 * self.v[name] + (1.0 - c.beta2) * g * g
            step = c.lr * (self.m[name] / bias1) / (np.sqrt(self.v[name] / bias2) + c.eps)
            params[name] = params[name] - step


@dataclass
class TrainResult:
    params: ModelParams
    curve: List[Dict[str, float]] = field(default_factory=list)
    snapshots: List[ModelParams] = field(default_factory=list)
    marginal_params: Optional[ModelParams] = None


def prepare_examples(
    scenarios: Sequence[Scenario],
    anchors: Mapping[ObjectType, AnchorSet],
    params: ModelParams,
    raster_config: RasterConfig = None,
    representation: str = "plain",
    marginal_params: Optional[ModelParams] = None,
) -> List[Example]:
    """Model inputs for every scenario; rerasterized inputs take partner futures from `marginal_params`."""
    examples = []
    for scenario in scenarios:
        partner = None
        if representation == "rerasterized":
            m0, m1 = predict_marginals(scenario, anchors, marginal_params or params, raster_config)
            partner = (m0.top1(), m1.top1())
        examples.append(prepare_example(scenario, anchors, params, raster_config, representation, partner))
    return examples


def _epoch_order(examples: Sequence[Example], rng: np.random.Generator, balanced: bool) -> np.ndarray:
    if not balanced:
        return rng.permutation(len(examples))
    groups = {t: [] for t in ObjectType}
    for idx, ex in enumerate(examples):
        groups[ex.types[0]].append(idx)
    seed = int(rng.integers(0, 2**31 - 1))
    return np.asarray(balanced_sample(groups, len(examples), seed), dtype=np.int64)


def _run_phase(
    phase: str,
    examples: List[Example],
    params: ModelParams,
    optimizer: Adam,
    names: Sequence[str],
    weights: LossWeights,
    config: TrainConfig,
    epochs: int,
    rng: np.random.Generator,
    result: TrainResult,
    budget: List[int],
    refresh=None,
) -> None:
    joint_only = phase == "joint" and config.freeze_marginal
    for epoch in range(epochs):
        if budget[0] <= 0:
            return
        if refresh is not None and epoch > 0:
            examples = refresh()
        order = _epoch_order(examples, rng, config.balanced)
        for start in range(0, len(order), config.batch_size):
            if budget[0] <= 0:
                return
            batch = [examples[i] for i in order[start:start + config.batch_size]]
            grads, breakdown = backward(batch, params, weights, phase=phase, joint_only=joint_only)
            if not np.isfinite(breakdown.total):
                raise DivergenceError(len(result.curve), breakdown)
            optimizer.step(params, grads, names)
            budget[0] -= 1
            row = {"step": len(result.curve), "phase": phase, "epoch": epoch, **breakdown.to_json()}
            result.curve.append(row)
            logger.debug("step %d (%s): loss %.6f", row["step"], phase, breakdown.total)
            if config.snapshot_every and len(result.curve) % config.snapshot_every == 0:
                result.snapshots.append(params.copy())
        logger.info("%s epoch %d done, last loss %.4f", phase, epoch, result.curve[-1]["total"] if result.curve else float("nan"))


def train(
    scenarios: Sequence[Scenario],
    params: ModelParams,
    anchors: Mapping[ObjectType, AnchorSet],
    config: TrainConfig = None,
    weights: LossWeights = None,
    raster_config: RasterConfig = None,
    seed: int = 0,
) -> TrainResult:
    """
    Two phases: the marginal model on plain rasters (regression + marginal classification), then
    the interaction loss on the configured representation. With `freeze_marginal` only the joint
    tensors move in phase two. Inputs `params` are not modified.
    """
    config = config or TrainConfig()
    weights = weights or LossWeights()
    params = params.copy()
    rng = np.random.default_rng(seed)
    result = TrainResult(params=params)
    budget = [config.max_steps if config.max_steps is not None else np.iinfo(np.int64).max]
    marginal_names = [n for n in params if not is_joint_parameter(n)]

    if config.marginal_epochs:
        plain = prepare_examples(scenarios, anchors, params, raster_config, "plain")
        optimizer = Adam(params, config)
        _run_phase("marginal", plain, params, optimizer, marginal_names, weights, config,
                   config.marginal_epochs, rng, result, budget)
    result.marginal_params = params.copy()

    if config.joint_epochs:
        def refresh() -> List[Example]:
            # partner futures follow the current marginal weights
            return prepare_examples(scenarios, anchors, params, raster_config, config.representation)

        names = [n for n in params if is_joint_parameter(n)] if config.freeze_marginal else params.names()
        optimizer = Adam(params, config)
        examples = refresh()
        _run_phase("joint", examples, params, optimizer, names, weights, config, config.joint_epochs,
                   rng, result, budget, refresh if config.representation == "rerasterized" else None)
    return result
