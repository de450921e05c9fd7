# /src/airsq/data/scenarios.py

import json
import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import List, Mapping, Sequence, Tuple, Union

import numpy as np

from airsq.data.geometry import Pose, wrap_angle
from airsq.errors import EmptyDatasetError, InvariantError, ScenarioFormatError
from airsq.utils.io import atomic_write_text

logger = logging.getLogger(__name__)

FUTURE_STEPS = 80
PAST_STEPS = 11
DEFAULT_MAX_STEP = 10.0  # meters per 0.1 s step


class ObjectType(str, Enum):
    VEHICLE = "vehicle"
    PEDESTRIAN = "pedestrian"
    CYCLIST = "cyclist"


def _frozen(array, dtype) -> np.ndarray:
    out = np.array(array, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class Trajectory:
    """80 future (x, y) steps plus the availability mask."""

    points: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        points = _frozen(self.points, float)
        valid = _frozen(self.valid, bool)
        if points.shape != (FUTURE_STEPS, 2) or valid.shape != (FUTURE_STEPS,):
            raise InvariantError(
                "future length",
                f"expected {FUTURE_STEPS} steps, got {points.shape[0] if points.ndim else 0}",
            )
        if not np.all(np.isfinite(points[valid])):
            raise InvariantError("future points", "non-finite coordinate at a valid step")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "valid", valid)

    @classmethod
    def fully_valid(cls, points) -> "Trajectory":
        return cls(points=points, valid=np.ones(FUTURE_STEPS, dtype=bool))

    def __eq__(self, other):
        if not isinstance(other, Trajectory):
            return NotImplemented
        return bool(
            np.array_equal(self.points, other.points, equal_nan=True)
            and np.array_equal(self.valid, other.valid)
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class PastStates:
    """11 history states (1 s at 10 Hz plus current): x, y, vx, vy, heading."""

    states: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        states = _frozen(self.states, float)
        valid = _frozen(self.valid, bool)
        if states.shape != (PAST_STEPS, 5) or valid.shape != (PAST_STEPS,):
            raise InvariantError("past length", f"expected {PAST_STEPS} states, got {states.shape[0] if states.ndim else 0}")
        live = states[valid]
        if not np.all(np.isfinite(live)):
            raise InvariantError("past states", "non-finite value at a valid state")
        if np.any(np.abs(live[:, 4]) > np.pi):
            raise InvariantError("past heading", "heading outside [-pi, pi]")
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "valid", valid)

    @property
    def current(self) -> np.ndarray:
        return self.states[-1]

    def __eq__(self, other):
        if not isinstance(other, PastStates):
            return NotImplemented
        return bool(
            np.array_equal(self.states, other.states, equal_nan=True)
            and np.array_equal(self.valid, other.valid)
        )

    __hash__ = None


@dataclass(frozen=True)
class Agent:
    id: int
    type: ObjectType
    is_sdc: bool
    past: PastStates
    future: Trajectory


@dataclass(frozen=True, eq=False)
class Scenario:
    agents: Tuple[Agent, ...]
    pair: Tuple[int, int]
    roads: Tuple[np.ndarray, ...] = ()

    def __post_init__(self):
        agents = tuple(self.agents)
        if len(agents) < 2:
            raise InvariantError("agents", "a scenario needs at least 2 agents")
        ids = [a.id for a in agents]
        if len(set(ids)) != len(ids):
            raise InvariantError("id", "agent ids must be unique within a scenario")
        pair = tuple(int(i) for i in self.pair)
        if len(pair) != 2 or pair[0] == pair[1] or not all(0 <= i < len(agents) for i in pair):
            raise InvariantError("pair", f"invalid pair {self.pair} for {len(agents)} agents")
        roads = []
        for road in self.roads:
            arr = _frozen(road, float).reshape(-1, 2)
            if not np.all(np.isfinite(arr)):
                raise InvariantError("roads", "non-finite polyline vertex")
            roads.append(arr)
        object.__setattr__(self, "agents", agents)
        object.__setattr__(self, "pair", pair)
        object.__setattr__(self, "roads", tuple(roads))

    def pair_agent(self, slot: int) -> Agent:
        return self.agents[self.pair[slot]]

    def swapped(self) -> "Scenario":
        """Same scene with the interacting pair's slot order reversed."""
        return Scenario(agents=self.agents, pair=(self.pair[1], self.pair[0]), roads=self.roads)

    def __eq__(self, other):
        if not isinstance(other, Scenario):
            return NotImplemented
        return (
            self.agents == other.agents
            and self.pair == other.pair
            and len(self.roads) == len(other.roads)
            and all(np.array_equal(a, b) for a, b in zip(self.roads, other.roads))
        )

    __hash__ = None


def ego_pose(agent: Agent) -> Pose:
    """Pose of the agent's current (last) history state."""
    if not agent.past.valid[-1]:
        raise InvariantError("past", f"agent {agent.id} has no valid current state")
    x, y, _, _, heading = agent.past.current
    return Pose(origin=(float(x), float(y)), heading=float(wrap_angle(heading)))


# -------------------------
# JSON Lines codec
# -------------------------
def _agent_from_json(obj: dict) -> Agent:
    try:
        obj_type = ObjectType(obj["type"])
    except ValueError:
        raise InvariantError("type", f"unknown object type {obj['type']!r}")
    past = np.asarray(obj["past"], dtype=object)
    if past.ndim != 2 or past.shape[1] != 6:
        raise InvariantError("past length", f"expected {PAST_STEPS} rows of 6 values")
    future = np.asarray(obj["future"], dtype=object)
    if future.ndim != 2 or future.shape[1] != 3:
        raise InvariantError("future length", f"expected {FUTURE_STEPS} rows of 3 values")
    return Agent(
        id=int(obj["id"]),
        type=obj_type,
        is_sdc=bool(obj["is_sdc"]),
        past=PastStates(states=past[:, :5].astype(float), valid=past[:, 5].astype(bool)),
        future=Trajectory(points=future[:, :2].astype(float), valid=future[:, 2].astype(bool)),
    )


def scenario_from_json(obj: dict) -> Scenario:
    return Scenario(
        agents=tuple(_agent_from_json(a) for a in obj["agents"]),
        pair=tuple(obj["pair"]),
        roads=tuple(np.asarray(r, dtype=float).reshape(-1, 2) for r in obj.get("roads", [])),
    )


def scenario_to_json(scenario: Scenario) -> dict:
    agents = []
    for a in scenario.agents:
        agents.append({
            "id": a.id,
            "type": a.type.value,
            "is_sdc": a.is_sdc,
            "past": [[*map(float, s), bool(v)] for s, v in zip(a.past.states, a.past.valid)],
            "future": [[float(p[0]), float(p[1]), bool(v)] for p, v in zip(a.future.points, a.future.valid)],
        })
    return {
        "agents": agents,
        "pair": list(scenario.pair),
        "roads": [[[float(x), float(y)] for x, y in road] for road in scenario.roads],
    }


def load_scenarios(path: Union[str, Path]) -> List[Scenario]:
    scenarios = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise ScenarioFormatError(lineno, f"invalid JSON ({e.msg})")
            try:
                scenarios.append(scenario_from_json(obj))
            except InvariantError as e:
                raise InvariantError(e.field, f"line {lineno}: {e}")
            except (KeyError, TypeError) as e:
                raise ScenarioFormatError(lineno, f"missing or malformed field {e}")
    logger.debug("Loaded %d scenarios from %s", len(scenarios), path)
    return scenarios


def dumps_scenarios(scenarios: Sequence[Scenario]) -> str:
    return "".join(json.dumps(scenario_to_json(s), separators=(",", ":")) + "\n" for s in scenarios)


def save_scenarios(scenarios: Sequence[Scenario], path: Union[str, Path]) -> None:
    atomic_write_text(path, dumps_scenarios(scenarios))
    logger.info("Wrote %d scenarios to %s", len(scenarios), path)


# -------------------------
# Corruption filtering
# -------------------------
def is_corrupt(trajectory: Trajectory, max_step: float = DEFAULT_MAX_STEP) -> bool:
    """True if two adjacent, both-valid steps are more than `max_step` apart."""
    both = trajectory.valid[1:] & trajectory.valid[:-1]
    if not both.any():
        return False
    steps = np.linalg.norm(np.diff(trajectory.points, axis=0)[both], axis=1)
    return bool(np.any(steps > max_step))


def filter_corrupt(trajectories: Sequence[Trajectory], max_step: float = DEFAULT_MAX_STEP) -> List[Trajectory]:
    if max_step <= 0:
        raise InvariantError("max_step", "max_step must be positive")
    kept = [t for t in trajectories if not is_corrupt(t, max_step)]
    dropped = len(trajectories) - len(kept)
    if dropped:
        logger.info("Dropped %d of %d trajectories with jumps above %.2f m", dropped, len(trajectories), max_step)
    return kept


def filter_corrupt_scenarios(scenarios: Sequence[Scenario], max_step: float = DEFAULT_MAX_STEP) -> List[Scenario]:
    """Drop scenarios whose interacting pair carries a corrupt future."""
    if max_step <= 0:
        raise InvariantError("max_step", "max_step must be positive")
    kept = [
        s for s in scenarios
        if not any(is_corrupt(s.pair_agent(slot).future, max_step) for slot in (0, 1))
    ]
    logger.info("Kept %d of %d scenarios (max step %.2f m)", len(kept), len(scenarios), max_step)
    return kept


# -------------------------
# Balanced sampling
# -------------------------
def balanced_sample(
    datasets: Union[Mapping[ObjectType, Sequence], Sequence[Sequence]],
    n: int,
    seed: int,
) -> list:
    """Pick a type with probability 1/3, then a uniform element of it, `n` times."""
    if isinstance(datasets, Mapping):
        ordered = [(t, datasets.get(t, ())) for t in ObjectType]
    else:
        if len(datasets) != len(ObjectType):
            raise ValueError(f"expected {len(ObjectType)} datasets, got {len(datasets)}")
        ordered = list(zip(ObjectType, datasets))
    for obj_type, items in ordered:
        if len(items) == 0:
            raise EmptyDatasetError(obj_type)
    if n < 0:
        raise ValueError("n must be non-negative")

    rng = np.random.default_rng(seed)
    type_draws = rng.integers(0, len(ordered), size=n)
    out = []
    for t in type_draws:
        items = ordered[t][1]
        out.append(items[int(rng.integers(0, len(items)))])
    return out
