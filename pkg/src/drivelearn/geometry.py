"""Planar geometric primitives: arc-length polylines, oriented boxes, cones.

All operations are pure functions on immutable inputs and are safe to call
from concurrent rollout workers.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi


def normalize_angle(theta: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    a = math.fmod(theta + math.pi, TWO_PI)
    if a < 0.0:
        a += TWO_PI
    a -= math.pi
    if a == -math.pi:
        a = math.pi
    return a


@dataclass(frozen=True)
class Pose2:
    """Position plus heading; heading is normalized into (-pi, pi]."""

    x: float
    y: float
    heading: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y) and math.isfinite(self.heading)):
            raise ValueError("pose coordinates must be finite")
        object.__setattr__(self, "heading", normalize_angle(self.heading))

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y])


class ArcPath:
    """Arc-length parametrized polyline.

    `points` is an (N, 2) array with N >= 2 and no repeated consecutive
    points; `cum_s[i]` is the arc length from the start to point i.
    """

    __slots__ = ("points", "cum_s", "_seg", "_seg_len", "_headings")

    def __init__(self, points):
        pts = np.asarray(points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 2:
            raise ValueError("path needs at least two 2-d points")
        if not np.all(np.isfinite(pts)):
            raise ValueError("path coordinates must be finite")
        seg = np.diff(pts, axis=0)
        seg_len = np.hypot(seg[:, 0], seg[:, 1])
        if np.any(seg_len == 0.0):
            raise ValueError("consecutive path points must be distinct")
        self.points = pts
        self.cum_s = np.concatenate(([0.0], np.cumsum(seg_len)))
        self._seg = seg
        self._seg_len = seg_len
        self._headings = np.arctan2(seg[:, 1], seg[:, 0])
        for a in (self.points, self.cum_s, self._seg, self._seg_len, self._headings):
            a.flags.writeable = False

    @property
    def total_length(self) -> float:
        return float(self.cum_s[-1])

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class OrientedBox:
    """Rectangle footprint: center, heading, length along heading, width."""

    cx: float
    cy: float
    heading: float
    length: float
    width: float

    def __post_init__(self):
        if self.length <= 0.0 or self.width <= 0.0:
            raise ValueError("box length and width must be positive")

    def corners(self) -> np.ndarray:
        """Corners in order front-left, front-right, rear-right, rear-left."""
        c, s = math.cos(self.heading), math.sin(self.heading)
        hl, hw = 0.5 * self.length, 0.5 * self.width
        local = np.array([[hl, hw], [hl, -hw], [-hl, -hw], [-hl, hw]])
        rot = np.array([[c, -s], [s, c]])
        return local @ rot.T + np.array([self.cx, self.cy])

    @property
    def center(self) -> np.ndarray:
        return np.array([self.cx, self.cy])


def arc_project(path: ArcPath, p) -> tuple[float, float]:
    """Project a point onto the polyline.

    Returns (s, lateral): s is the arc length of the closest path point,
    lateral the signed perpendicular offset (positive left of travel).
    Ties go to the smaller s.
    """
    p = np.asarray(p, dtype=float)
    base = path.points[:-1]
    seg = path._seg
    rel = p - base
    t = np.einsum("ij,ij->i", rel, seg) / (path._seg_len**2)
    np.clip(t, 0.0, 1.0, out=t)
    proj = base + t[:, None] * seg
    off = p - proj
    d2 = np.einsum("ij,ij->i", off, off)
    i = int(np.argmin(d2))
    s = float(path.cum_s[i] + t[i] * path._seg_len[i])
    tx, ty = seg[i] / path._seg_len[i]
    lateral = float(tx * off[i, 1] - ty * off[i, 0])
    return s, lateral


def arc_project_window(path: ArcPath, p, s_lo: float, s_hi: float) -> tuple[float, float]:
    """arc_project restricted to the segments overlapping [s_lo, s_hi]."""
    i0 = max(0, int(np.searchsorted(path.cum_s, s_lo, side="right")) - 1)
    i1 = min(len(path._seg_len), int(np.searchsorted(path.cum_s, s_hi, side="left")))
    i1 = max(i1, i0 + 1)
    p = np.asarray(p, dtype=float)
    base = path.points[i0:i1]
    seg = path._seg[i0:i1]
    seg_len = path._seg_len[i0:i1]
    rel = p - base
    t = np.einsum("ij,ij->i", rel, seg) / (seg_len**2)
    np.clip(t, 0.0, 1.0, out=t)
    proj = base + t[:, None] * seg
    off = p - proj
    d2 = np.einsum("ij,ij->i", off, off)
    k = int(np.argmin(d2))
    s = float(path.cum_s[i0 + k] + t[k] * seg_len[k])
    tx, ty = seg[k] / seg_len[k]
    lateral = float(tx * off[k, 1] - ty * off[k, 0])
    return s, lateral


def _segment_index(path: ArcPath, s: np.ndarray) -> np.ndarray:
    idx = np.searchsorted(path.cum_s, s, side="right") - 1
    return np.clip(idx, 0, len(path._seg_len) - 1)


def positions_at(path: ArcPath, s) -> np.ndarray:
    """Vectorized point lookup at arc lengths `s` (clamped to the path)."""
    s = np.clip(np.asarray(s, dtype=float), 0.0, path.total_length)
    idx = _segment_index(path, s)
    t = (s - path.cum_s[idx]) / path._seg_len[idx]
    return path.points[idx] + t[..., None] * path._seg[idx]


def pose_at(path: ArcPath, s: float) -> Pose2:
    """Pose at arc length s (clamped); heading is the segment direction."""
    s = min(max(float(s), 0.0), path.total_length)
    idx = int(_segment_index(path, np.asarray(s)))
    t = (s - path.cum_s[idx]) / path._seg_len[idx]
    x, y = path.points[idx] + t * path._seg[idx]
    return Pose2(float(x), float(y), float(path._headings[idx]))


def heading_at(path: ArcPath, s: float) -> float:
    s = min(max(float(s), 0.0), path.total_length)
    return float(path._headings[int(_segment_index(path, np.asarray(s)))])


def tangent_at(path: ArcPath, s: float) -> np.ndarray:
    s = min(max(float(s), 0.0), path.total_length)
    i = int(_segment_index(path, np.asarray(s)))
    return path._seg[i] / path._seg_len[i]


def sample_ahead(path: ArcPath, s0: float, spacing: float, count: int) -> np.ndarray:
    """`count` points at s0 + k*spacing, k = 1..count, clamped to the end."""
    if spacing <= 0.0:
        raise ValueError("spacing must be positive")
    if count < 1:
        raise ValueError("count must be >= 1")
    s = s0 + spacing * np.arange(1, count + 1)
    return positions_at(path, s)


def obb_overlap(a: OrientedBox, b: OrientedBox) -> bool:
    """Separating-axis test over the 4 box axes; touching counts as overlap."""
    ca = a.corners()
    cb = b.corners()
    for heading in (a.heading, b.heading):
        c, s = math.cos(heading), math.sin(heading)
        for ax, ay in ((c, s), (-s, c)):
            pa = ca[:, 0] * ax + ca[:, 1] * ay
            pb = cb[:, 0] * ax + cb[:, 1] * ay
            if pa.min() > pb.max() or pb.min() > pa.max():
                return False
    return True


def in_front_cone(ego: Pose2, target, half_angle: float) -> bool:
    """True iff target lies within +-half_angle of the ego heading.

    A target exactly at the ego position is not in the cone.
    """
    if not 0.0 < half_angle < math.pi:
        raise ValueError("half_angle must lie in (0, pi)")
    tx, ty = float(target[0]), float(target[1])
    dx, dy = tx - ego.x, ty - ego.y
    if dx == 0.0 and dy == 0.0:
        return False
    bearing = normalize_angle(math.atan2(dy, dx) - ego.heading)
    return abs(bearing) <= half_angle
