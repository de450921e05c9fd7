# /src/airsq/utils/config.py

import hashlib
import logging
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple

import numpy as np
from dotenv import load_dotenv

from airsq.data.scenarios import DEFAULT_MAX_STEP, ObjectType
from airsq.data.synth import SynthConfig
from airsq.errors import ConfigError
from airsq.evaluation.metrics import MapConfig
from airsq.prediction.anchors import DEFAULT_K
from airsq.prediction.loss import LossWeights
from airsq.prediction.params import ModelConfig
from airsq.prediction.raster import RasterConfig
from airsq.prediction.train import TrainConfig
from airsq.utils.io import read_json

logger = logging.getLogger(__name__)

ENV_CONFIG = "AIRSQ_CONFIG"
ENV_LOG_LEVEL = "AIRSQ_LOG_LEVEL"


@dataclass(frozen=True)
class ClusterConfig:
    k_vehicle: int = DEFAULT_K[ObjectType.VEHICLE]
    k_pedestrian: int = DEFAULT_K[ObjectType.PEDESTRIAN]
    k_cyclist: int = DEFAULT_K[ObjectType.CYCLIST]
    iters: int = 50
    max_step: float = DEFAULT_MAX_STEP

    def k_per_type(self) -> Dict[ObjectType, int]:
        return {
            ObjectType.VEHICLE: self.k_vehicle,
            ObjectType.PEDESTRIAN: self.k_pedestrian,
            ObjectType.CYCLIST: self.k_cyclist,
        }


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    raster: RasterConfig = field(default_factory=RasterConfig)
    map: MapConfig = field(default_factory=MapConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    cluster: ClusterConfig = field(default_factory=ClusterConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)


_SECTIONS = {f.name for f in fields(RunConfig)} - {"seed"}


def _tuples(value: Any) -> Any:
    if isinstance(value, list):
        return tuple(_tuples(v) for v in value)
    if isinstance(value, dict):
        return {k: _tuples(v) for k, v in value.items()}
    return value


def _apply(section_obj: Any, updates: Mapping[str, Any], section: str) -> Any:
    known = {f.name for f in fields(section_obj)}
    unknown = set(updates) - known
    if unknown:
        raise ConfigError(f"unknown keys in [{section}]: {sorted(unknown)}")
    try:
        return replace(section_obj, **_tuples(dict(updates)))
    except (TypeError, ValueError) as e:
        raise ConfigError(f"[{section}] {e}")


def merge(config: RunConfig, raw: Mapping[str, Any]) -> RunConfig:
    """Overlay a nested mapping (config-file shape) onto `config`."""
    unknown = set(raw) - _SECTIONS - {"seed"}
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    updates: Dict[str, Any] = {}
    if "seed" in raw:
        updates["seed"] = int(raw["seed"])
    for section in _SECTIONS & set(raw):
        updates[section] = _apply(getattr(config, section), raw[section], section)
    return replace(config, **updates)


def load_run_config(path: Optional[str] = None, overrides: Optional[Mapping[str, Any]] = None) -> RunConfig:
    """
    Defaults < config file (`path`, else $AIRSQ_CONFIG) < `overrides`.
    `.env` in the working directory is loaded first.
    """
    load_dotenv()
    path = path or os.environ.get(ENV_CONFIG)
    config = RunConfig()
    if path:
        if not Path(path).exists():
            raise ConfigError(f"config file not found: {path}")
        config = merge(config, read_json(path))
        logger.debug("Loaded config from %s", path)
    if overrides:
        config = merge(config, overrides)
    return config


def log_level(default: str = "INFO") -> str:
    load_dotenv()
    return os.environ.get(ENV_LOG_LEVEL, default).upper()


def split_flag(name: str) -> Tuple[str, str]:
    """'train.lr' -> ('train', 'lr')."""
    section, _, key = name.partition(".")
    return section, key


def derive_seed(seed: int, name: str) -> int:
    """Independent, stable stream per subcommand: the name is hashed into the seed sequence."""
    stream = int.from_bytes(hashlib.sha256(name.encode("utf-8")).digest()[:4], "little")
    return int(np.random.SeedSequence([int(seed), stream]).generate_state(1)[0])
