# /src/airsq/prediction/raster.py

import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, Iterator, Tuple, Union

import numpy as np

from airsq.data.geometry import Pose, to_ego, wrap_angle
from airsq.data.scenarios import Agent, ObjectType, Scenario, Trajectory, ego_pose
from airsq.errors import ConfigError
from airsq.utils.io import atomic_write_bytes

logger = logging.getLogger(__name__)

HISTORY_SHADES = 10
PREDICTION_SHADES = 8

# length x width in meters
FOOTPRINTS = {
    ObjectType.VEHICLE: (4.5, 2.0),
    ObjectType.PEDESTRIAN: (1.0, 1.0),
    ObjectType.CYCLIST: (2.0, 1.0),
}


def _shade(lo: int, hi: int, i: int, n: int) -> int:
    return lo + (hi - lo) * i // (n - 1)


def _color_table() -> Dict[str, Tuple[int, int, int]]:
    table = {
        "background": (0, 0, 0),
        "road": (128, 128, 128),
        "context": (0, 0, 255),
        "agent": (0, 255, 0),
    }
    # oldest history is darkest
    for i in range(HISTORY_SHADES):
        v = _shade(60, 240, i, HISTORY_SHADES)
        table[f"history_{i}"] = (v, v, 0)
    # prediction starts bright and darkens with time
    for i in range(PREDICTION_SHADES):
        table[f"prediction_{i}"] = (_shade(255, 80, i, PREDICTION_SHADES), 0, 0)
    return table


COLORS = _color_table()


@dataclass(frozen=True)
class RasterConfig:
    height: int = 224
    width: int = 448
    resolution: float = 0.5  # meters per pixel
    ego_px: Tuple[int, int] = (112, 112)  # (row, col)

    def __post_init__(self):
        r, c = self.ego_px
        if not (0 <= r < self.height and 0 <= c < self.width):
            raise ConfigError(f"ego pixel {self.ego_px} outside a {self.height}x{self.width} image")
        if self.resolution <= 0:
            raise ConfigError("resolution must be positive")

    @property
    def colors(self) -> Dict[str, Tuple[int, int, int]]:
        return COLORS

    @property
    def shape(self) -> Tuple[int, int, int]:
        return (self.height, self.width, 3)

    def scaled(self, factor: int) -> "RasterConfig":
        """Same coverage on a canvas `factor` times smaller per side."""
        return replace(
            self,
            height=self.height // factor,
            width=self.width // factor,
            resolution=self.resolution * factor,
            ego_px=(self.ego_px[0] // factor, self.ego_px[1] // factor),
        )


# -------------------------
# Pixel helpers
# -------------------------
def _quantize(values):
    # pins world-frame round-off so rigid motions of the scene render identically
    return np.round(np.asarray(values, dtype=float), 6)


def _pixels(ego_xy: np.ndarray, config: RasterConfig) -> np.ndarray:
    q = _quantize(ego_xy)
    col = np.floor(config.ego_px[1] + q[..., 0] / config.resolution + 0.5)
    row = np.floor(config.ego_px[0] - q[..., 1] / config.resolution + 0.5)
    return np.stack([row, col], axis=-1).astype(np.int64)


def _inside(config: RasterConfig, r: int, c: int) -> bool:
    return 0 <= r < config.height and 0 <= c < config.width


def bresenham(r0: int, c0: int, r1: int, c1: int) -> Iterator[Tuple[int, int]]:
    dr, dc = abs(r1 - r0), -abs(c1 - c0)
    sr = 1 if r0 < r1 else -1
    sc = 1 if c0 < c1 else -1
    err = dr + dc
    while True:
        yield r0, c0
        if r0 == r1 and c0 == c1:
            return
        e2 = 2 * err
        if e2 >= dc:
            err += dc
            r0 += sr
        if e2 <= dr:
            err += dr
            c0 += sc


def _draw_segment(img: np.ndarray, a, b, color, config: RasterConfig) -> None:
    (r0, c0), (r1, c1) = a, b
    h, w = config.height, config.width
    # both ends off the same edge: nothing to draw
    if (r0 < 0 and r1 < 0) or (c0 < 0 and c1 < 0) or (r0 >= h and r1 >= h) or (c0 >= w and c1 >= w):
        return
    for r, c in bresenham(int(r0), int(c0), int(r1), int(c1)):
        if _inside(config, r, c):
            img[r, c] = color


def _draw_box(img: np.ndarray, agent: Agent, pose: Pose, color, config: RasterConfig) -> None:
    x, y, _, _, heading = agent.past.current
    center = _quantize(to_ego((x, y), pose))
    rel = float(_quantize(wrap_angle(heading - pose.heading)))
    length, width = FOOTPRINTS[agent.type]
    res = config.resolution
    cr, cc = _pixels(center, config)
    reach = int(math.ceil(math.hypot(length, width) / 2.0 / res)) + 1

    rows = np.arange(cr - reach, cr + reach + 1)
    cols = np.arange(cc - reach, cc + reach + 1)
    rows = rows[(rows >= 0) & (rows < config.height)]
    cols = cols[(cols >= 0) & (cols < config.width)]
    if rows.size and cols.size:
        rr, ccs = np.meshgrid(rows, cols, indexing="ij")
        dx = (ccs - config.ego_px[1]) * res - center[0]
        dy = (config.ego_px[0] - rr) * res - center[1]
        cos, sin = math.cos(rel), math.sin(rel)
        u = dx * cos + dy * sin
        v = -dx * sin + dy * cos
        hit = (np.abs(u) <= length / 2.0) & (np.abs(v) <= width / 2.0)
        img[rr[hit], ccs[hit]] = color
    if _inside(config, cr, cc):
        img[cr, cc] = color


# -------------------------
# Public API
# -------------------------
def rasterize(scenario: Scenario, ego: int, config: RasterConfig = None) -> np.ndarray:
    """
    Render the scene around pair slot `ego` as an (H, W, 3) uint8 image.

    Ego sits at `config.ego_px` facing increasing column index. Layers, back to front:
    roads, context-agent boxes, faded history points, then both pair agents in green.
    """
    config = config or RasterConfig()
    colors = config.colors
    ego_agent = scenario.pair_agent(ego)
    pose = ego_pose(ego_agent)
    img = np.zeros(config.shape, dtype=np.uint8)
    img[:, :] = colors["background"]

    for road in scenario.roads:
        px = _pixels(to_ego(road, pose), config)
        for a, b in zip(px[:-1], px[1:]):
            _draw_segment(img, a, b, colors["road"], config)
        if len(px) == 1 and _inside(config, *px[0]):
            img[px[0][0], px[0][1]] = colors["road"]

    pair = set(scenario.pair)
    for idx, agent in enumerate(scenario.agents):
        if idx not in pair and agent.past.valid[-1]:
            _draw_box(img, agent, pose, colors["context"], config)

    for agent in scenario.agents:
        hist = agent.past
        xy = np.where(hist.valid[:-1, None], hist.states[:-1, :2], 0.0)
        px = _pixels(to_ego(xy, pose), config)
        for k in range(len(px)):
            if hist.valid[k] and _inside(config, *px[k]):
                img[px[k][0], px[k][1]] = colors[f"history_{k * HISTORY_SHADES // len(px)}"]

    for slot in (0, 1):
        agent = scenario.pair_agent(slot)
        if agent.past.valid[-1]:
            _draw_box(img, agent, pose, colors["agent"], config)
    return img


def rerasterize(
    scenario: Scenario,
    ego: int,
    partner_prediction: Union[Trajectory, np.ndarray],
    config: RasterConfig = None,
) -> np.ndarray:
    """`rasterize` plus the other pair agent's predicted future, red fading with time."""
    config = config or RasterConfig()
    points = partner_prediction.points if isinstance(partner_prediction, Trajectory) else np.asarray(partner_prediction)
    if points.shape[0] != 80:
        raise ValueError(f"partner prediction needs 80 steps, got {points.shape[0]}")
    img = rasterize(scenario, ego, config)
    px = _pixels(to_ego(points, ego_pose(scenario.pair_agent(ego))), config)
    n = len(px)
    first = config.colors["prediction_0"]
    if _inside(config, *px[0]):
        img[px[0][0], px[0][1]] = first
    for t in range(1, n):
        _draw_segment(img, px[t - 1], px[t], config.colors[f"prediction_{t * PREDICTION_SHADES // n}"], config)
    return img


def write_ppm(image: np.ndarray, path: Union[str, Path]) -> None:
    """Binary P6 PPM, 8 bits per channel."""
    img = np.ascontiguousarray(image, dtype=np.uint8)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) image, got {img.shape}")
    header = f"P6\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii")
    atomic_write_bytes(path, header + img.tobytes())
