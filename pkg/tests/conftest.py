import math

import numpy as np
import pytest

from airsq.data.scenarios import FUTURE_STEPS, PAST_STEPS, Agent, ObjectType, PastStates, Scenario, Trajectory
from airsq.prediction.anchors import AnchorSet
from airsq.prediction.model import JointPrediction, MarginalPrediction
from airsq.prediction.params import ModelConfig, init_params

DT = 0.1


def make_agent(agent_id=0, obj_type=ObjectType.VEHICLE, start=(0.0, 0.0), heading=0.0, speed=10.0,
               is_sdc=False, future_valid=None):
    direction = np.array([math.cos(heading), math.sin(heading)])
    start = np.asarray(start, dtype=float)
    lags = (np.arange(PAST_STEPS) - (PAST_STEPS - 1)) * DT
    xy = start[None] + (speed * lags)[:, None] * direction[None]
    states = np.column_stack([xy, np.tile(speed * direction, (PAST_STEPS, 1)), np.full(PAST_STEPS, heading)])
    t = np.arange(1, FUTURE_STEPS + 1) * DT
    future = start[None] + (speed * t)[:, None] * direction[None]
    valid = np.ones(FUTURE_STEPS, bool) if future_valid is None else np.asarray(future_valid, bool)
    return Agent(
        id=agent_id,
        type=obj_type,
        is_sdc=is_sdc,
        past=PastStates(states=states, valid=np.ones(PAST_STEPS, bool)),
        future=Trajectory(points=future, valid=valid),
    )


def make_scenario(types=(ObjectType.VEHICLE, ObjectType.VEHICLE), sdc=(False, False), context=True):
    agents = [
        make_agent(0, types[0], start=(-20.0, 1.0), heading=0.1, speed=8.0, is_sdc=sdc[0]),
        make_agent(1, types[1], start=(2.0, -25.0), heading=1.4, speed=5.0, is_sdc=sdc[1]),
    ]
    if context:
        agents.append(make_agent(2, ObjectType.PEDESTRIAN, start=(10.0, 12.0), heading=-2.0, speed=1.5))
    roads = (np.array([[-60.0, 0.0], [0.0, 0.0], [60.0, 0.0]]), np.array([[0.0, -60.0], [0.0, 60.0]]))
    return Scenario(agents=tuple(agents), pair=(0, 1), roads=roads)


def fan_anchors(obj_type, K, speed):
    """K straight-line centroids fanning out from the origin in the ego frame."""
    t = np.arange(1, FUTURE_STEPS + 1) * DT
    angles = np.linspace(-0.6, 0.6, K)
    centroids = np.stack([np.column_stack([speed * t * math.cos(a), speed * t * math.sin(a)]) for a in angles])
    return AnchorSet(type=obj_type, centroids=centroids, counts=np.ones(K, dtype=np.int64))


def make_prediction(grid, traj0, traj1, types=("vehicle", "vehicle")):
    grid = np.asarray(grid, dtype=float)
    k = grid.shape[0]
    return JointPrediction(
        grid=grid,
        marginal0=MarginalPrediction(np.asarray(traj0, float), grid.sum(axis=1), np.ones(k, bool)),
        marginal1=MarginalPrediction(np.asarray(traj1, float), grid.sum(axis=0), np.ones(k, bool)),
        types=types,
    )


@pytest.fixture
def agent_factory():
    return make_agent


@pytest.fixture
def scenario():
    return make_scenario()


@pytest.fixture
def mixed_scenarios():
    """Covers every object type and the sdc head."""
    return [
        make_scenario((ObjectType.VEHICLE, ObjectType.PEDESTRIAN), sdc=(True, False)),
        make_scenario((ObjectType.CYCLIST, ObjectType.VEHICLE)),
    ]


@pytest.fixture
def anchor_sets():
    return {
        ObjectType.VEHICLE: fan_anchors(ObjectType.VEHICLE, 4, 9.0),
        ObjectType.PEDESTRIAN: fan_anchors(ObjectType.PEDESTRIAN, 3, 1.5),
        ObjectType.CYCLIST: fan_anchors(ObjectType.CYCLIST, 2, 5.0),
    }


@pytest.fixture
def tiny_config():
    # 224x448 canvas downscaled by 14
    return ModelConfig(input_height=16, input_width=32, channels=(4, 4), trunk_dim=8, joint_dim=6, k_max=4, num_ctrl=8)


@pytest.fixture
def tiny_params(tiny_config):
    return init_params(tiny_config, seed=0)


def read_ppm(path):
    """Decode a binary P6 file back into an (H, W, 3) uint8 array."""
    data = path.read_bytes()
    magic, size, depth, pixels = data.split(b"\n", 3)
    assert magic == b"P6" and depth == b"255"
    width, height = (int(v) for v in size.split())
    return np.frombuffer(pixels[: width * height * 3], dtype=np.uint8).reshape(height, width, 3).copy()
