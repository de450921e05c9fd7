# /src/airsq/data/synth.py

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Tuple

import numpy as np

from airsq.data.geometry import wrap_angle
from airsq.data.scenarios import (
    FUTURE_STEPS,
    PAST_STEPS,
    Agent,
    ObjectType,
    PastStates,
    Scenario,
    Trajectory,
)

logger = logging.getLogger(__name__)

DT = 0.1


@dataclass(frozen=True)
class SynthConfig:
    """Knobs of the crossing-paths generator. Speeds in m/s, times in seconds."""

    type_probs: Tuple[float, float, float] = (0.5, 0.25, 0.25)  # vehicle, pedestrian, cyclist
    speeds: Dict[str, Tuple[float, float]] = field(default_factory=lambda: {
        "vehicle": (8.0, 12.0),
        "pedestrian": (1.2, 1.8),
        "cyclist": (4.0, 6.0),
    })
    arrival_time: Tuple[float, float] = (3.0, 5.0)
    stop_fraction: Tuple[float, float] = (0.5, 0.7)  # share of the approach the yielder covers
    crossing_angle_deg: Tuple[float, float] = (60.0, 120.0)
    max_context: int = 3
    dropout: float = 0.02
    corrupt_rate: float = 0.0
    corrupt_jump: float = 100.0
    sdc_prob: float = 0.2
    extent: float = 50.0


def _draw_type(rng: np.random.Generator, cfg: SynthConfig) -> ObjectType:
    return list(ObjectType)[int(rng.choice(len(ObjectType), p=np.asarray(cfg.type_probs)))]


def _constant_past(start: np.ndarray, direction: np.ndarray, speed: float, heading: float) -> PastStates:
    lags = (np.arange(PAST_STEPS) - (PAST_STEPS - 1)) * DT
    xy = start[None, :] + (speed * lags)[:, None] * direction[None, :]
    vel = np.broadcast_to(speed * direction, (PAST_STEPS, 2))
    states = np.column_stack([xy, vel, np.full(PAST_STEPS, heading)])
    return PastStates(states=states, valid=np.ones(PAST_STEPS, dtype=bool))


def _future(start: np.ndarray, direction: np.ndarray, distance: np.ndarray,
            rng: np.random.Generator, cfg: SynthConfig) -> Trajectory:
    points = start[None, :] + distance[:, None] * direction[None, :]
    valid = rng.random(FUTURE_STEPS) >= cfg.dropout
    if not valid.any():
        valid[-1] = True
    if cfg.corrupt_rate > 0 and rng.random() < cfg.corrupt_rate:
        t = int(rng.integers(1, FUTURE_STEPS))
        points[t] = points[t] + np.array([cfg.corrupt_jump, 0.0])
        valid[t - 1:t + 2] = True
    return Trajectory(points=points, valid=valid)


def travelled(speed: float, stop_at: float = None) -> np.ndarray:
    """Distance along the path at t = 0.1..8.0 s; constant speed, or a uniform stop at `stop_at` m."""
    t = np.arange(1, FUTURE_STEPS + 1) * DT
    if stop_at is None:
        return speed * t
    decel = speed * speed / (2.0 * stop_at)
    t_stop = speed / decel
    return np.where(t < t_stop, speed * t - 0.5 * decel * t * t, stop_at)


def _context_agent(agent_id: int, center: np.ndarray, rng: np.random.Generator, cfg: SynthConfig) -> Agent:
    obj_type = _draw_type(rng, cfg)
    heading = float(rng.uniform(-math.pi, math.pi))
    direction = np.array([math.cos(heading), math.sin(heading)])
    lo, hi = cfg.speeds[obj_type.value]
    speed = float(rng.uniform(lo, hi)) if rng.random() < 0.5 else 0.0
    start = center + rng.uniform(-0.8 * cfg.extent, 0.8 * cfg.extent, size=2)
    return Agent(
        id=agent_id,
        type=obj_type,
        is_sdc=False,
        past=_constant_past(start, direction, speed, heading),
        future=_future(start, direction, travelled(speed), rng, cfg),
    )


def _generate_one(rng: np.random.Generator, cfg: SynthConfig) -> Scenario:
    conflict = rng.uniform(-cfg.extent, cfg.extent, size=2)
    base = float(rng.uniform(-math.pi, math.pi))
    turn = math.radians(float(rng.uniform(*cfg.crossing_angle_deg))) * (1 if rng.random() < 0.5 else -1)
    headings = [float(wrap_angle(base)), float(wrap_angle(base + turn))]
    yielder = int(rng.integers(0, 2))

    agents = []
    roads = []
    for slot, heading in enumerate(headings):
        obj_type = _draw_type(rng, cfg)
        lo, hi = cfg.speeds[obj_type.value]
        speed = float(rng.uniform(lo, hi))
        approach = speed * float(rng.uniform(*cfg.arrival_time))
        direction = np.array([math.cos(heading), math.sin(heading)])
        start = conflict - approach * direction
        stop_at = approach * float(rng.uniform(*cfg.stop_fraction)) if slot == yielder else None
        agents.append(Agent(
            id=slot,
            type=obj_type,
            is_sdc=bool(slot == 0 and rng.random() < cfg.sdc_prob),
            past=_constant_past(start, direction, speed, heading),
            future=_future(start, direction, travelled(speed, stop_at), rng, cfg),
        ))
        roads.append(np.stack([conflict - 80.0 * direction, conflict, conflict + 80.0 * direction]))

    for _ in range(int(rng.integers(0, cfg.max_context + 1))):
        agents.append(_context_agent(len(agents), conflict, rng, cfg))

    return Scenario(agents=tuple(agents), pair=(0, 1), roads=tuple(roads))


def synth_generate(n: int, seed: int, config: SynthConfig = None) -> List[Scenario]:
    """Crossing-paths scenes: one of the pair yields short of the conflict point, the other goes."""
    if n < 0:
        raise ValueError("n must be non-negative")
    cfg = config or SynthConfig()
    rng = np.random.default_rng(seed)
    scenarios = [_generate_one(rng, cfg) for _ in range(n)]
    logger.info("Generated %d synthetic scenarios (seed=%d)", n, seed)
    return scenarios
