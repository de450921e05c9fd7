# /src/airsq/prediction/params.py

import logging
from collections import OrderedDict
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Dict, Iterator, List, Tuple, Union

import numpy as np

from airsq.data.scenarios import PAST_STEPS, ObjectType
from airsq.errors import ConfigError, InvariantError, ShapeMismatchError
from airsq.prediction.layers import conv_output_size
from airsq.utils.io import dump_json, read_json, atomic_write_text

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "airsq-checkpoint"
CHECKPOINT_VERSION = 1

JOINT_HEADS = ("vehicle", "pedestrian", "cyclist", "sdc")
PAST_FEATURES = PAST_STEPS * 6


@dataclass(frozen=True)
class ModelConfig:
    """Architecture sizes. The extractor input is the downscaled raster."""

    input_height: int = 112
    input_width: int = 224
    channels: Tuple[int, ...] = (8, 16, 32, 32)
    trunk_dim: int = 64
    joint_dim: int = 32
    k_max: int = 32
    num_ctrl: int = 8

    @property
    def embedding_dim(self) -> int:
        return self.channels[-1]

    @property
    def head_outputs(self) -> int:
        return self.k_max * (self.num_ctrl * 2 + 1)

    def feature_map_size(self) -> Tuple[int, int]:
        h, w = self.input_height, self.input_width
        for _ in self.channels:
            h, w = conv_output_size(h), conv_output_size(w)
        return h, w

    def to_json(self) -> dict:
        out = asdict(self)
        out["channels"] = list(self.channels)
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "ModelConfig":
        unknown = set(obj) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        obj = dict(obj)
        if "channels" in obj:
            obj["channels"] = tuple(obj["channels"])
        return cls(**obj)


def parameter_shapes(config: ModelConfig) -> "OrderedDict[str, Tuple[int, ...]]":
    """Names and shapes of every learnable tensor, in a fixed order."""
    shapes: "OrderedDict[str, Tuple[int, ...]]" = OrderedDict()
    cin = 3
    for i, cout in enumerate(config.channels):
        shapes[f"extractor.conv{i}.weight"] = (cin, 3, 3, cout)
        shapes[f"extractor.conv{i}.bias"] = (cout,)
        cin = cout
    d = config.trunk_dim
    shapes["trunk.weight"] = (config.embedding_dim, d)
    shapes["trunk.bias"] = (d,)
    for t in ObjectType:
        shapes[f"head.{t.value}.past.weight"] = (PAST_FEATURES, d)
        shapes[f"head.{t.value}.past.bias"] = (d,)
        shapes[f"head.{t.value}.fc.weight"] = (d, d)
        shapes[f"head.{t.value}.fc.bias"] = (d,)
        shapes[f"head.{t.value}.out.weight"] = (d, config.head_outputs)
        shapes[f"head.{t.value}.out.bias"] = (config.head_outputs,)
    shapes["joint.trunk.weight"] = (2 * d, config.joint_dim)
    shapes["joint.trunk.bias"] = (config.joint_dim,)
    for name in JOINT_HEADS:
        shapes[f"joint.head.{name}.weight"] = (config.joint_dim, config.k_max * config.k_max)
        shapes[f"joint.head.{name}.bias"] = (config.k_max * config.k_max,)
    return shapes


def is_joint_parameter(name: str) -> bool:
    return name.startswith("joint.")


class ModelParams:
    """
    Named float64 tensors of the marginal and joint networks plus their config.

    Guarantees:
    - iteration order is `parameter_shapes(config)` order
    - shapes always match the config (checked on construction and assignment)
    """

    def __init__(self, config: ModelConfig, tensors: Dict[str, np.ndarray]):
        self.config = config
        self._tensors: "OrderedDict[str, np.ndarray]" = OrderedDict()
        expected = parameter_shapes(config)
        missing = set(expected) - set(tensors)
        extra = set(tensors) - set(expected)
        if missing or extra:
            raise ShapeMismatchError(f"parameter names differ: missing={sorted(missing)} extra={sorted(extra)}")
        for name, shape in expected.items():
            arr = np.asarray(tensors[name], dtype=float)
            if arr.shape != shape:
                raise ShapeMismatchError(f"{name}: expected {shape}, got {arr.shape}")
            self._tensors[name] = arr

    def __getitem__(self, name: str) -> np.ndarray:
        return self._tensors[name]

    def __setitem__(self, name: str, value: np.ndarray) -> None:
        if self._tensors[name].shape != np.shape(value):
            raise ShapeMismatchError(f"{name}: expected {self._tensors[name].shape}, got {np.shape(value)}")
        self._tensors[name] = np.asarray(value, dtype=float)

    def __iter__(self) -> Iterator[str]:
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    def items(self):
        return self._tensors.items()

    def names(self) -> List[str]:
        return list(self._tensors)

    def size(self) -> int:
        return int(sum(a.size for a in self._tensors.values()))

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {k: v.copy() for k, v in self._tensors.items()})

    def zeros_like(self) -> "ModelParams":
        return ModelParams(self.config, {k: np.zeros_like(v) for k, v in self._tensors.items()})

    def map(self, fn: Callable[[str, np.ndarray], np.ndarray]) -> "ModelParams":
        return ModelParams(self.config, {k: fn(k, v) for k, v in self._tensors.items()})

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self._tensors.values())

    def equals(self, other: "ModelParams", names=None) -> bool:
        names = names if names is not None else self.names()
        return all(np.array_equal(self[n], other[n]) for n in names)

    # -------------------------
    # Checkpoint codec
    # -------------------------
    def to_json(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "config": self.config.to_json(),
            "params": {
                name: {"shape": list(arr.shape), "data": arr.ravel().tolist()}
                for name, arr in self._tensors.items()
            },
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ModelParams":
        if obj.get("format") != CHECKPOINT_FORMAT:
            raise InvariantError("format", f"not an {CHECKPOINT_FORMAT} file")
        if obj.get("version") != CHECKPOINT_VERSION:
            raise InvariantError("version", f"unsupported checkpoint version {obj.get('version')}")
        config = ModelConfig.from_json(obj["config"])
        tensors = {
            name: np.asarray(entry["data"], dtype=float).reshape(entry["shape"])
            for name, entry in obj["params"].items()
        }
        return cls(config, tensors)


def init_params(config: ModelConfig = None, seed: int = 0) -> ModelParams:
    """He-normal weights (std sqrt(2 / fan_in)), zero biases; output layers scaled down."""
    config = config or ModelConfig()
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in parameter_shapes(config).items():
        if name.endswith(".bias"):
            tensors[name] = np.zeros(shape)
            continue
        fan_in = int(np.prod(shape[:-1]))
        std = np.sqrt(2.0 / fan_in)
        if ".out." in name or name.startswith("joint.head."):
            std *= 0.1
        tensors[name] = rng.normal(0.0, std, size=shape)
    return ModelParams(config, tensors)


def save_checkpoint(params: ModelParams, path: Union[str, Path]) -> None:
    atomic_write_text(path, dump_json(params.to_json()) + "\n")
    logger.info("Wrote checkpoint with %d parameters to %s", params.size(), path)


def load_checkpoint(path: Union[str, Path]) -> ModelParams:
    return ModelParams.from_json(read_json(path))
