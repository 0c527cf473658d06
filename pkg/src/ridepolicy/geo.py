"""Planar geometry on a km grid: convex hulls, market polygons, hex cells.

All coordinates are kilometres in a flat local plane. Convex polygons are
stored counter-clockwise starting from the lexicographically smallest
vertex, which makes equality and serialisation deterministic. The hex grid
is a pointy-top axial grid sized by cell area.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "PointHull",
    "SegmentHull",
    "ConvexPolygon",
    "convex_hull",
    "point_in_convex_polygon",
    "signed_distance",
    "signed_distance_batch",
    "hull_within_buffer",
    "HexGrid",
]


@dataclass(frozen=True)
class PointHull:
    """Degenerate hull of coincident points."""

    x: float
    y: float

    @property
    def vertices(self) -> np.ndarray:
        return np.array([[self.x, self.y]])


@dataclass(frozen=True)
class SegmentHull:
    """Degenerate hull of collinear points: the two extreme points."""

    ax: float
    ay: float
    bx: float
    by: float

    @property
    def vertices(self) -> np.ndarray:
        return np.array([[self.ax, self.ay], [self.bx, self.by]])


@dataclass(frozen=True)
class ConvexPolygon:
    """Convex polygon, vertices CCW from the lexicographically smallest.

    Parameters
    ----------
    points : array-like of shape (n, 2)
        Vertices in CCW order. The constructor rotates the ring so the
        lexicographically smallest vertex comes first; it does not sort or
        validate convexity (build via :func:`convex_hull` for raw points).
    """

    points: tuple = field()

    def __init__(self, points):
        arr = np.asarray(points, dtype=float)
        if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] < 3:
            raise ValueError("ConvexPolygon needs at least 3 (x, y) vertices")
        start = np.lexsort((arr[:, 1], arr[:, 0]))[0]
        arr = np.roll(arr, -start, axis=0)
        object.__setattr__(self, "points", tuple(map(tuple, arr)))

    @property
    def vertices(self) -> np.ndarray:
        return np.asarray(self.points, dtype=float)

    @property
    def centroid(self) -> tuple[float, float]:
        """Area-weighted centroid."""
        v = self.vertices
        x, y = v[:, 0], v[:, 1]
        xn, yn = np.roll(x, -1), np.roll(y, -1)
        cross = x * yn - xn * y
        area = cross.sum() / 2.0
        cx = ((x + xn) * cross).sum() / (6.0 * area)
        cy = ((y + yn) * cross).sum() / (6.0 * area)
        return float(cx), float(cy)

    def contains(self, x, y, eps: float = 1e-9):
        """Vectorised point-in-polygon test (boundary counts as inside)."""
        v = self.vertices
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        ex = np.roll(v[:, 0], -1) - v[:, 0]
        ey = np.roll(v[:, 1], -1) - v[:, 1]
        # cross(edge, p - v) >= 0 for every edge of a CCW polygon
        px = x[..., None] - v[:, 0]
        py = y[..., None] - v[:, 1]
        cross = ex * py - ey * px
        return (cross >= -eps).all(axis=-1)


Hull = PointHull | SegmentHull | ConvexPolygon


def _cross(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def convex_hull(points) -> Hull:
    """Convex hull by Andrew's monotone chain.

    Collinear points on the boundary are dropped. Inputs with fewer than
    three distinct non-collinear points yield :class:`PointHull` or
    :class:`SegmentHull`.

    Parameters
    ----------
    points : array-like of shape (n, 2)

    Returns
    -------
    PointHull | SegmentHull | ConvexPolygon
    """
    arr = np.asarray(points, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] == 0:
        raise ValueError("convex_hull expects a non-empty (n, 2) array")
    uniq = np.unique(arr, axis=0)
    order = np.lexsort((uniq[:, 1], uniq[:, 0]))
    pts = [tuple(p) for p in uniq[order]]
    if len(pts) == 1:
        return PointHull(*pts[0])
    if len(pts) == 2:
        (ax, ay), (bx, by) = pts
        return SegmentHull(ax, ay, bx, by)

    lower: list[tuple[float, float]] = []
    for p in pts:
        while len(lower) >= 2 and _cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list[tuple[float, float]] = []
    for p in reversed(pts):
        while len(upper) >= 2 and _cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    ring = lower[:-1] + upper[:-1]
    if len(ring) == 2:
        (ax, ay), (bx, by) = ring
        return SegmentHull(ax, ay, bx, by)
    return ConvexPolygon(ring)


def point_in_convex_polygon(point, polygon: ConvexPolygon, eps: float = 1e-9) -> bool:
    """True when ``point`` lies inside or on ``polygon``."""
    return bool(polygon.contains(point[0], point[1], eps=eps))


def _segment_distances(px, py, ax, ay, bx, by):
    """Distance from points (px, py) to each segment (a, b); broadcasts."""
    dx = bx - ax
    dy = by - ay
    length2 = dx * dx + dy * dy
    t = ((px - ax) * dx + (py - ay) * dy) / np.where(length2 == 0, 1.0, length2)
    t = np.clip(t, 0.0, 1.0)
    cx = ax + t * dx
    cy = ay + t * dy
    return np.hypot(px - cx, py - cy)


def signed_distance_batch(x, y, polygon: ConvexPolygon) -> np.ndarray:
    """Signed distance to the polygon boundary: negative inside.

    Points on the boundary return 0. Vectorised over ``x`` and ``y``.
    """
    v = polygon.vertices
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    ax, ay = v[:, 0], v[:, 1]
    bx, by = np.roll(ax, -1), np.roll(ay, -1)
    d = _segment_distances(x[..., None], y[..., None], ax, ay, bx, by).min(axis=-1)
    inside = polygon.contains(x, y)
    return np.where(inside, -d, d)


def signed_distance(point, polygon: ConvexPolygon) -> float:
    """Scalar signed distance to the polygon boundary (negative inside)."""
    return float(signed_distance_batch(point[0], point[1], polygon))


def hull_within_buffer(hull: Hull, polygon: ConvexPolygon, buffer_km: float) -> bool:
    """True when every hull vertex lies within ``buffer_km`` of ``polygon``.

    The buffered region is closed: a vertex exactly ``buffer_km`` from the
    boundary still counts. A convex hull lies inside the buffered region iff
    all its vertices do, so testing vertices is exact.
    """
    v = hull.vertices
    d = signed_distance_batch(v[:, 0], v[:, 1], polygon)
    return bool((d <= buffer_km + 1e-12).all())


class HexGrid:
    """Pointy-top axial hex grid sized by cell area.

    Cell centers sit at ``x = s*sqrt(3)*(q + r/2)``, ``y = 1.5*s*r`` where
    ``s`` is the edge length chosen so each cell covers ``area_km2``.
    """

    def __init__(self, area_km2: float):
        if area_km2 <= 0:
            raise ValueError("hex area must be positive")
        self.area_km2 = float(area_km2)
        self.size = math.sqrt(2.0 * area_km2 / (3.0 * math.sqrt(3.0)))

    def __repr__(self) -> str:
        return f"HexGrid(area_km2={self.area_km2})"

    def center(self, q, r):
        """Cartesian center of cell(s) (q, r)."""
        q = np.asarray(q, dtype=float)
        r = np.asarray(r, dtype=float)
        x = self.size * math.sqrt(3.0) * (q + r / 2.0)
        y = self.size * 1.5 * r
        return x, y

    def hex_of(self, x, y):
        """Axial cell containing each point; ties resolved by cube rounding."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        qf = (math.sqrt(3.0) / 3.0 * x - y / 3.0) / self.size
        rf = (2.0 / 3.0 * y) / self.size
        sf = -qf - rf
        q = np.round(qf)
        r = np.round(rf)
        s = np.round(sf)
        dq = np.abs(q - qf)
        dr = np.abs(r - rf)
        ds = np.abs(s - sf)
        fix_q = (dq > dr) & (dq > ds)
        fix_r = ~fix_q & (dr > ds)
        q = np.where(fix_q, -r - s, q)
        r = np.where(fix_r, -q - s, r)
        return q.astype(np.int64), r.astype(np.int64)

    @staticmethod
    def distance(q1, r1, q2, r2):
        """Hop distance between cells."""
        dq = np.asarray(q1) - np.asarray(q2)
        dr = np.asarray(r1) - np.asarray(r2)
        return (np.abs(dq) + np.abs(dr) + np.abs(dq + dr)) // 2

    @staticmethod
    def ring(q: int, r: int, k: int) -> list[tuple[int, int]]:
        """All cells within hop distance ``k`` of (q, r), center included.

        Returns ``1 + 3k(k+1)`` cells sorted by (q, r).
        """
        if k < 0:
            raise ValueError("k must be nonnegative")
        cells = [
            (q + dq, r + dr)
            for dq in range(-k, k + 1)
            for dr in range(max(-k, -dq - k), min(k, -dq + k) + 1)
        ]
        cells.sort()
        return cells


def clip_segment_to_polygon(ox, oy, tx, ty, polygon: ConvexPolygon):
    """Parameter range [t0, t1] where o + t*(target - o) is inside the polygon.

    Returns ``None`` when the segment misses the polygon entirely. Used to
    find the boundary entry point of a trip that crosses into a market.
    """
    v = polygon.vertices
    ax, ay = v[:, 0], v[:, 1]
    ex = np.roll(ax, -1) - ax
    ey = np.roll(ay, -1) - ay
    dx = tx - ox
    dy = ty - oy
    # inside means cross(edge, p - a) >= 0; linear in t
    c0 = ex * (oy - ay) - ey * (ox - ax)
    c1 = ex * dy - ey * dx
    t0, t1 = 0.0, 1.0
    for a, b in zip(c0, c1):
        if abs(b) < 1e-15:
            if a < 0:
                return None
            continue
        t_hit = -a / b
        if b > 0:
            t0 = max(t0, t_hit)
        else:
            t1 = min(t1, t_hit)
        if t0 > t1:
            return None
    return t0, t1
