"""Closed-loop tracks and nearest-point queries against their centerline."""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree
from shapely.geometry import LinearRing

CAR_WIDTH = 2.0
MIN_VERTICES = 32
MAX_SEGMENT = 5.0
FIELD_RES = 1.0
FIELD_MARGIN = 60.0

# (base radius m, [(harmonic, relative amplitude, phase)], half width m, style seed)
_NAMED = {
    "A": (160.0, [(2, 0.10, 0.3), (3, 0.07, 1.0), (5, 0.02, 2.0)], 6.0, 1101),
    "B": (150.0, [(2, 0.08, 1.3), (3, 0.06, 0.2), (4, 0.045, 2.5)], 6.0, 2207),
}


class TrackError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Track:
    id: str
    centerline: np.ndarray
    half_width: float
    style_seed: int
    _geom: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        pts = np.ascontiguousarray(np.asarray(self.centerline, dtype=np.float64))
        object.__setattr__(self, "centerline", pts)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise TrackError(f"centerline must be (n, 2), got {pts.shape}")
        if len(pts) < MIN_VERTICES:
            raise TrackError(f"centerline needs >= {MIN_VERTICES} vertices, got {len(pts)}")
        if not np.isfinite(pts).all():
            raise TrackError("centerline has non-finite coordinates")
        seg = np.roll(pts, -1, axis=0) - pts
        seg_len = np.hypot(seg[:, 0], seg[:, 1])
        if seg_len.max() >= MAX_SEGMENT:
            raise TrackError(f"consecutive centerline points must be < {MAX_SEGMENT} m apart "
                             f"(max gap {seg_len.max():.3f} m)")
        if seg_len.min() <= 0:
            raise TrackError("centerline has repeated points")
        if not self.half_width > CAR_WIDTH:
            raise TrackError(f"half_width {self.half_width} must exceed car width {CAR_WIDTH}")
        if not LinearRing(pts).is_simple:
            raise TrackError("centerline self-intersects")
        g = self._geom
        g["start"] = pts
        g["seg"] = seg
        g["seg_len"] = seg_len
        g["seg_len2"] = seg_len ** 2
        g["arc0"] = np.concatenate([[0.0], np.cumsum(seg_len)[:-1]])
        g["tangent"] = np.arctan2(seg[:, 1], seg[:, 0])
        g["lock"] = threading.Lock()

    @property
    def length(self) -> float:
        return float(self._geom["seg_len"].sum())

    @property
    def n_segments(self) -> int:
        return len(self.centerline)

    def same_geometry(self, other: "Track") -> bool:
        return (self.centerline.shape == other.centerline.shape
                and bool(np.array_equal(self.centerline, other.centerline))
                and self.half_width == other.half_width)

    # -- nearest point ----------------------------------------------------
    def nearest(self, p) -> tuple[int, float, float, float, float]:
        """Exact nearest centerline point to ``p``.

        Returns (segment index, unsigned distance, signed lateral offset
        (positive = left of travel direction), tangent angle, arc length).
        Ties go to the lowest segment index.
        """
        g = self._geom
        px, py = float(p[0]), float(p[1])
        ax = g["start"][:, 0]
        ay = g["start"][:, 1]
        dx = g["seg"][:, 0]
        dy = g["seg"][:, 1]
        t = np.clip(((px - ax) * dx + (py - ay) * dy) / g["seg_len2"], 0.0, 1.0)
        qx = ax + t * dx
        qy = ay + t * dy
        d2 = (px - qx) ** 2 + (py - qy) ** 2
        i = int(np.argmin(d2))
        dist = float(np.sqrt(d2[i]))
        cross = dx[i] * (py - ay[i]) - dy[i] * (px - ax[i])
        signed = dist if cross >= 0 else -dist
        arc = float(g["arc0"][i] + t[i] * g["seg_len"][i])
        return i, dist, signed, float(g["tangent"][i]), arc

    def point_at(self, fraction: float) -> tuple[np.ndarray, float]:
        """Centerline position and tangent angle at a lap fraction in [0, 1)."""
        g = self._geom
        s = (fraction % 1.0) * self.length
        i = int(np.searchsorted(g["arc0"], s, side="right") - 1)
        t = (s - g["arc0"][i]) / g["seg_len"][i]
        return g["start"][i] + t * g["seg"][i], float(g["tangent"][i])

    # -- rasterized helper for rendering ---------------------------------
    def segment_field(self):
        """Grid of nearest-segment indices used to seed per-pixel projection.

        Built lazily (once per track) and shared read-only afterwards.
        """
        g = self._geom
        if "field" not in g:
            with g["lock"]:
                if "field" not in g:
                    g["field"] = _build_field(self)
        return g["field"]

    def project_many(self, px: np.ndarray, py: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Signed lateral offset and arc length for many world points.

        The grid supplies a candidate segment; the exact projection is taken
        over that segment and its two neighbours.
        """
        g = self._geom
        origin, res, idx_grid = self.segment_field()
        n = self.n_segments
        gi = np.floor((px - origin[0]) / res).astype(np.int64)
        gj = np.floor((py - origin[1]) / res).astype(np.int64)
        inside = (gi >= 0) & (gi < idx_grid.shape[0]) & (gj >= 0) & (gj < idx_grid.shape[1])
        base = np.zeros(px.shape, dtype=np.int64)
        base[inside] = idx_grid[gi[inside], gj[inside]]
        best_d2 = np.full(px.shape, np.inf)
        best_signed = np.zeros(px.shape)
        best_arc = np.zeros(px.shape)
        for off in (-1, 0, 1):
            k = (base + off) % n
            ax = g["start"][k, 0]
            ay = g["start"][k, 1]
            dx = g["seg"][k, 0]
            dy = g["seg"][k, 1]
            t = np.clip(((px - ax) * dx + (py - ay) * dy) / g["seg_len2"][k], 0.0, 1.0)
            rx = px - (ax + t * dx)
            ry = py - (ay + t * dy)
            d2 = rx * rx + ry * ry
            better = d2 < best_d2
            cross = dx * ry - dy * rx
            signed = np.where(cross >= 0, 1.0, -1.0) * np.sqrt(d2)
            best_d2 = np.where(better, d2, best_d2)
            best_signed = np.where(better, signed, best_signed)
            best_arc = np.where(better, g["arc0"][k] + t * g["seg_len"][k], best_arc)
        far = np.inf
        best_signed = np.where(inside, best_signed, far)
        return best_signed, best_arc


def _build_field(track: Track):
    pts = track.centerline
    lo = pts.min(axis=0) - FIELD_MARGIN
    hi = pts.max(axis=0) + FIELD_MARGIN
    nx = int(np.ceil((hi[0] - lo[0]) / FIELD_RES))
    ny = int(np.ceil((hi[1] - lo[1]) / FIELD_RES))
    g = track._geom
    # dense samples along every segment, labelled with their segment index
    per = np.maximum(1, np.ceil(g["seg_len"] / 0.25).astype(int))
    seg_ids = np.repeat(np.arange(track.n_segments), per)
    frac = np.concatenate([np.arange(p) / p for p in per])
    samples = g["start"][seg_ids] + frac[:, None] * g["seg"][seg_ids]
    tree = cKDTree(samples)
    cx = lo[0] + (np.arange(nx) + 0.5) * FIELD_RES
    cy = lo[1] + (np.arange(ny) + 0.5) * FIELD_RES
    gx, gy = np.meshgrid(cx, cy, indexing="ij")
    _, nearest = tree.query(np.column_stack([gx.ravel(), gy.ravel()]))
    idx = seg_ids[nearest].reshape(nx, ny).astype(np.int32)
    return lo, FIELD_RES, idx


def _polar_centerline(radius: float, harmonics, spacing: float = 2.5) -> np.ndarray:
    th = np.linspace(0.0, 2.0 * np.pi, 8192, endpoint=False)
    r = radius * (1.0 + sum(a * np.cos(k * th + ph) for k, a, ph in harmonics))
    xy = np.column_stack([r * np.cos(th), r * np.sin(th)])
    closed = np.vstack([xy, xy[:1]])
    seglen = np.hypot(*np.diff(closed, axis=0).T)
    arc = np.concatenate([[0.0], np.cumsum(seglen)])
    n = max(MIN_VERTICES, int(np.ceil(arc[-1] / spacing)))
    s = np.linspace(0.0, arc[-1], n, endpoint=False)
    return np.column_stack([np.interp(s, arc, closed[:, 0]), np.interp(s, arc, closed[:, 1])])


def min_turn_radius(centerline: np.ndarray) -> float:
    """Smallest circumradius over consecutive vertex triples."""
    a = centerline
    b = np.roll(a, -1, axis=0)
    c = np.roll(a, -2, axis=0)
    ab = np.hypot(*(b - a).T)
    bc = np.hypot(*(c - b).T)
    ca = np.hypot(*(a - c).T)
    area2 = np.abs((b - a)[:, 0] * (c - a)[:, 1] - (b - a)[:, 1] * (c - a)[:, 0])
    with np.errstate(divide="ignore"):
        r = ab * bc * ca / (2.0 * area2)
    return float(np.min(r))


def make_track(spec: str | int) -> Track:
    """``"A"``/``"B"`` give the two fixed tracks; an integer gives a seeded random track."""
    if isinstance(spec, str):
        key = spec.upper().removeprefix("TRACK")
        if key not in _NAMED:
            raise TrackError(f"unknown track {spec!r}; expected A, B or an integer seed")
        radius, harmonics, hw, style_seed = _NAMED[key]
        return Track(f"Track{key}", _polar_centerline(radius, harmonics), hw, style_seed)
    seed = int(spec)
    rng = np.random.default_rng([seed, 0x7AC])
    radius = rng.uniform(120.0, 180.0)
    harmonics = [(k, rng.uniform(0.0, 0.08), rng.uniform(0.0, 2 * np.pi)) for k in (2, 3, 4)]
    for _ in range(20):
        pts = _polar_centerline(radius, harmonics)
        if min_turn_radius(pts) >= 60.0:
            break
        harmonics = [(k, a * 0.8, ph) for k, a, ph in harmonics]
    return Track(f"seed{seed}", pts, float(rng.uniform(5.0, 7.0)), int(rng.integers(0, 2**31 - 1)))
