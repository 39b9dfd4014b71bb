"""Forward-facing pseudo-3D rasterizer with interchangeable visual styles.

Every style is a colouring of the same per-pixel class map, so the
segmentation of a view never depends on the style used to draw it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .car import CarState
from .track import Track

HEIGHT = WIDTH = 64
HORIZON = 20
CAM_HEIGHT = 4.0
FOCAL = 32.0
SKYLINE_BINS = 64
SKYLINE_MAX = 9

ROAD, LANE, OFFROAD, SKY, BUILDING, OBSTACLE = range(6)
CLASS_NAMES = ("road", "lane-marking", "off-road", "sky", "building-band", "obstacle")
K_CLS = len(CLASS_NAMES)

LANE_HALF_WIDTH = 0.25
DASH_PERIOD = 8.0
OBSTACLE_SPACING = 25.0
OBSTACLE_HALF = 1.5
OBSTACLE_GAP = 3.5

PARSING_PALETTE = np.array([
    (128, 64, 128),
    (255, 255, 255),
    (107, 142, 35),
    (70, 130, 180),
    (70, 70, 70),
    (220, 20, 60),
], dtype=np.float64)

_VIRTUAL_BASE = np.array([
    (95, 95, 105),
    (250, 250, 120),
    (30, 160, 60),
    (90, 150, 255),
    (170, 110, 70),
    (255, 150, 0),
], dtype=np.float64)

_REAL_BASE = np.array([
    (140, 135, 130),
    (235, 230, 210),
    (165, 150, 95),
    (185, 210, 235),
    (200, 185, 160),
    (190, 50, 40),
], dtype=np.float64)
_REAL_TEXTURE = np.array([18.0, 10.0, 30.0, 0.0, 25.0, 15.0])
_REAL_CELL = np.array([0.5, 0.5, 1.0, 1.0, 1.0, 0.5])


@dataclass(frozen=True)
class RenderStyle:
    kind: str  # "virtual" | "parsing" | "real" | "randomized"
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("virtual", "parsing", "real", "randomized"):
            raise ValueError(f"unknown render style {self.kind!r}")


VIRTUAL = RenderStyle("virtual")
PARSING = RenderStyle("parsing")
REAL = RenderStyle("real")


@dataclass(frozen=True)
class Palette:
    colors: np.ndarray  # (K_CLS, 3) in 0..255
    texture: np.ndarray  # (K_CLS,) noise amplitude
    cell: np.ndarray  # (K_CLS,) texture cell size in metres
    sky_gradient: float
    texture_seed: int


def randomized_styles(n: int, seed: int) -> list[RenderStyle]:
    if n < 1:
        raise ValueError(f"need at least one randomized style, got n={n}")
    rng = np.random.default_rng([seed, 0xD0])
    seeds = rng.choice(2**31 - 1, size=n, replace=False)
    return [RenderStyle("randomized", int(s)) for s in seeds]


def _perturb(base: np.ndarray, rng: np.random.Generator, amount: float) -> np.ndarray:
    return np.clip(base + rng.uniform(-amount, amount, size=base.shape), 0.0, 255.0)


@lru_cache(maxsize=256)
def palette_for(style: RenderStyle, style_seed: int) -> Palette:
    zeros = np.zeros(K_CLS)
    ones = np.ones(K_CLS)
    if style.kind == "parsing":
        return Palette(PARSING_PALETTE, zeros, ones, 0.0, 0)
    if style.kind == "virtual":
        rng = np.random.default_rng([style_seed, 1])
        return Palette(_perturb(_VIRTUAL_BASE, rng, 20.0), zeros, ones, 30.0, 0)
    if style.kind == "real":
        rng = np.random.default_rng([style_seed, 2])
        return Palette(_perturb(_REAL_BASE, rng, 20.0), _REAL_TEXTURE, _REAL_CELL, 40.0, style_seed)
    rng = np.random.default_rng([style.seed, 3])
    colors = _perturb(_VIRTUAL_BASE, rng, 70.0) * rng.uniform(0.75, 1.25)
    return Palette(np.clip(colors, 0.0, 255.0), rng.uniform(0.0, 10.0, size=K_CLS),
                   rng.choice([0.5, 1.0, 2.0], size=K_CLS), float(rng.uniform(0.0, 40.0)),
                   int(rng.integers(1, 2**31 - 1)))


# -- camera geometry (fixed for every frame) -----------------------------------
_rows = np.arange(HORIZON, HEIGHT)
_cols = np.arange(WIDTH)
_DEPTH = (CAM_HEIGHT * FOCAL / (_rows + 0.5 - HORIZON))[:, None] * np.ones((1, WIDTH))
_RIGHT = (_cols + 0.5 - WIDTH / 2)[None, :] / FOCAL * _DEPTH
_COL_ANGLE = np.arctan((_cols + 0.5 - WIDTH / 2) / FOCAL)


@lru_cache(maxsize=64)
def _skyline(style_seed: int) -> np.ndarray:
    rng = np.random.default_rng([style_seed, 4])
    return rng.integers(0, SKYLINE_MAX + 1, size=SKYLINE_BINS)


@dataclass
class Scene:
    """Per-pixel geometry of one view, shared by every style."""

    labels: np.ndarray  # (H, W) uint8
    wx: np.ndarray  # ground world coordinates, (H - HORIZON, W)
    wy: np.ndarray
    azimuth: np.ndarray  # (W,)
    depth: np.ndarray


def scene(state: CarState, track: Track) -> Scene:
    h = state.heading
    fx, fy = math.cos(h), math.sin(h)
    rx, ry = fy, -fx
    px, py = state.position
    wx = px + _DEPTH * fx + _RIGHT * rx
    wy = py + _DEPTH * fy + _RIGHT * ry
    d, s = track.project_many(wx, wy)
    hw = track.half_width
    ad = np.abs(d)
    ground = np.full(d.shape, OFFROAD, dtype=np.uint8)
    ground[ad <= hw] = ROAD
    ground[(ad < LANE_HALF_WIDTH) & (np.mod(s, DASH_PERIOD) < DASH_PERIOD / 2)] = LANE
    k = np.floor(s / OBSTACLE_SPACING)
    side = np.where(np.mod(k, 2) == 0, 1.0, -1.0)
    near_arc = np.abs(s - (k * OBSTACLE_SPACING + OBSTACLE_SPACING / 2)) < OBSTACLE_HALF
    near_lat = np.abs(d - side * (hw + OBSTACLE_GAP)) < OBSTACLE_HALF
    ground[near_arc & near_lat & (ad > hw)] = OBSTACLE

    azimuth = h - _COL_ANGLE
    bins = np.floor(np.mod(azimuth, 2 * np.pi) / (2 * np.pi) * SKYLINE_BINS).astype(int) % SKYLINE_BINS
    heights = _skyline(track.style_seed)[bins]
    upper = np.full((HORIZON, WIDTH), SKY, dtype=np.uint8)
    upper[np.arange(HORIZON)[:, None] >= HORIZON - heights[None, :]] = BUILDING
    return Scene(np.vstack([upper, ground]), wx, wy, azimuth, _DEPTH)


def render_segmentation(state: CarState, track: Track) -> np.ndarray:
    return scene(state, track).labels


def _hash_noise(ix: np.ndarray, iy: np.ndarray, seed: int) -> np.ndarray:
    """Deterministic value in [-1, 1] per integer lattice cell."""
    with np.errstate(over="ignore"):
        h = (ix.astype(np.uint64) * np.uint64(0x9E3779B97F4A7C15)
             ^ iy.astype(np.uint64) * np.uint64(0xC2B2AE3D27D4EB4F)
             ^ np.uint64(seed) * np.uint64(0x165667B19E3779F9))
        h ^= h >> np.uint64(29)
        h *= np.uint64(0xBF58476D1CE4E5B9)
        h ^= h >> np.uint64(32)
    return (h >> np.uint64(11)).astype(np.float64) / float(1 << 53) * 2.0 - 1.0


def colorize(sc: Scene, style: RenderStyle, track: Track) -> np.ndarray:
    """Frame in [-1, 1], channel-first (3, H, W), float32."""
    pal = palette_for(style, track.style_seed)
    labels = sc.labels
    rgb = pal.colors[labels]  # (H, W, 3)
    if style.kind != "parsing":
        shade = np.zeros(labels.shape)
        # ground texture in world coordinates so it moves with the scene
        g = labels[HORIZON:]
        cell = pal.cell[g]
        noise = _hash_noise(np.floor(sc.wx / cell).astype(np.int64),
                            np.floor(sc.wy / cell).astype(np.int64), pal.texture_seed)
        shade[HORIZON:] = noise * pal.texture[g]
        # buildings: textured in (azimuth, row) space
        up = labels[:HORIZON]
        az_cell = np.floor(np.mod(sc.azimuth, 2 * np.pi) * 40.0).astype(np.int64)
        rows = np.arange(HORIZON)[:, None]
        bnoise = _hash_noise(az_cell[None, :] + 0 * rows, rows // 2 + 0 * az_cell[None, :], pal.texture_seed + 7)
        shade[:HORIZON] = np.where(up == BUILDING, bnoise * pal.texture[BUILDING], 0.0)
        sky_ramp = (rows / HORIZON - 0.5) * pal.sky_gradient
        shade[:HORIZON] += np.where(up == SKY, sky_ramp, 0.0)
        rgb = rgb + shade[..., None]
    rgb = np.clip(rgb, 0.0, 255.0)
    return (rgb.transpose(2, 0, 1) / 127.5 - 1.0).astype(np.float32)


def render(state: CarState, track: Track, style: RenderStyle) -> np.ndarray:
    return colorize(scene(state, track), style, track)


def palette_image(labels: np.ndarray) -> np.ndarray:
    """Parsing-style frame for a class map."""
    rgb = PARSING_PALETTE[labels]
    return (rgb.transpose(2, 0, 1) / 127.5 - 1.0).astype(np.float32)


def nearest_palette_classes(frame: np.ndarray) -> np.ndarray:
    """Class map from a (3, H, W) frame by nearest parsing colour; ties -> lowest index."""
    pal = PARSING_PALETTE / 127.5 - 1.0
    d2 = ((frame.transpose(1, 2, 0)[:, :, None, :] - pal[None, None]) ** 2).sum(axis=-1)
    return np.argmin(d2, axis=-1).astype(np.uint8)
