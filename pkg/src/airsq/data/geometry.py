# /src/airsq/data/geometry.py

import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np


def wrap_angle(angle):
    """Map radians into [-pi, pi]."""
    wrapped = (np.asarray(angle, dtype=float) + np.pi) % (2.0 * np.pi) - np.pi
    if np.ndim(wrapped) == 0:
        return float(wrapped)
    return wrapped


@dataclass(frozen=True)
class Pose:
    """Rigid frame: `origin` in world meters, `heading` in radians."""

    origin: Tuple[float, float]
    heading: float

    def __post_init__(self):
        if not (-math.pi <= self.heading <= math.pi):
            raise ValueError(f"heading {self.heading} outside [-pi, pi]")

    def rotation(self) -> np.ndarray:
        c, s = math.cos(self.heading), math.sin(self.heading)
        return np.array([[c, -s], [s, c]])


def to_ego(points, pose: Pose) -> np.ndarray:
    """World -> ego. Accepts a single (x, y) or an (..., 2) array."""
    p = np.asarray(points, dtype=float)
    d = p - np.asarray(pose.origin, dtype=float)
    c, s = math.cos(pose.heading), math.sin(pose.heading)
    x = d[..., 0] * c + d[..., 1] * s
    y = -d[..., 0] * s + d[..., 1] * c
    return np.stack([x, y], axis=-1)


def to_world(points, pose: Pose) -> np.ndarray:
    """Ego -> world, the inverse of `to_ego`."""
    q = np.asarray(points, dtype=float)
    c, s = math.cos(pose.heading), math.sin(pose.heading)
    x = q[..., 0] * c - q[..., 1] * s + pose.origin[0]
    y = q[..., 0] * s + q[..., 1] * c + pose.origin[1]
    return np.stack([x, y], axis=-1)


def rotate_vectors(vectors, angle: float) -> np.ndarray:
    """Rotate free vectors (velocities) by `angle`; no translation."""
    v = np.asarray(vectors, dtype=float)
    c, s = math.cos(angle), math.sin(angle)
    return np.stack([v[..., 0] * c - v[..., 1] * s, v[..., 0] * s + v[..., 1] * c], axis=-1)
