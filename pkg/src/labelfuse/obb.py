"""Z-axis oriented bounding boxes and their overlap measures."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

HALF_PI = math.pi / 2


@dataclass(frozen=True)
class ObbZ:
    """Box free to rotate about world z only.

    ``yaw`` is the angle of the box's first axis (the one with half extent
    ``half_extents[0]``) from world x, canonicalized to [0, pi/2).
    """

    center: tuple
    yaw: float
    half_extents: tuple
    degenerate: bool = False

    @property
    def volume(self) -> float:
        ex, ey, ez = self.half_extents
        return 8.0 * ex * ey * ez

    @property
    def z_range(self) -> tuple[float, float]:
        return self.center[2] - self.half_extents[2], self.center[2] + self.half_extents[2]

    def axes(self) -> tuple[np.ndarray, np.ndarray]:
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        return np.array([c, s]), np.array([-s, c])

    def corners_xy(self) -> np.ndarray:
        """The XY footprint as 4 counter-clockwise corners."""
        a1, a2 = self.axes()
        ex, ey = self.half_extents[0], self.half_extents[1]
        c = np.asarray(self.center[:2], dtype=float)
        return np.array([c - ex * a1 - ey * a2, c + ex * a1 - ey * a2,
                         c + ex * a1 + ey * a2, c - ex * a1 + ey * a2])

    def contains(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        a1, a2 = self.axes()
        d = pts[:, :2] - np.asarray(self.center[:2])
        ex, ey, ez = self.half_extents
        return ((np.abs(d @ a1) <= ex) & (np.abs(d @ a2) <= ey)
                & (np.abs(pts[:, 2] - self.center[2]) <= ez))

    def to_dict(self) -> dict:
        return {"center": [float(x) for x in self.center], "yaw": float(self.yaw),
                "half_extents": [float(x) for x in self.half_extents],
                "degenerate": bool(self.degenerate)}


def _chain(pts: np.ndarray) -> np.ndarray:
    """Monotone chain over lexicographically sorted, distinct points."""
    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    rows = [tuple(p) for p in pts.tolist()]
    lower, upper = [], []
    for p in rows:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    for p in reversed(rows):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.array(lower[:-1] + upper[:-1], dtype=float)


def _side(pts: np.ndarray, a: np.ndarray, b: np.ndarray) -> list:
    """Hull vertices strictly left of a->b, ordered from a to b (quickhull step)."""
    d = b - a
    cr = d[0] * (pts[:, 1] - a[1]) - d[1] * (pts[:, 0] - a[0])
    left = cr > 0
    if not left.any():
        return []
    pts, cr = pts[left], cr[left]
    # farthest from the line; among ties the one furthest along a->b is a true corner
    along = (pts - a) @ d
    c = pts[np.lexsort((along, cr))[-1]]
    return _side(pts, a, c) + [c] + _side(pts, c, b)


def _sorted_unique(pts: np.ndarray) -> np.ndarray:
    pts = pts[np.lexsort((pts[:, 1], pts[:, 0]))]
    keep = np.ones(len(pts), dtype=bool)
    keep[1:] = np.any(pts[1:] != pts[:-1], axis=1)
    return pts[keep]


def convex_hull(points_xy) -> np.ndarray:
    """Counter-clockwise hull from the lexicographically smallest point, without collinear points."""
    pts = _sorted_unique(np.asarray(points_xy, dtype=float).reshape(-1, 2))
    if len(pts) <= 2:
        return pts
    if len(pts) <= 64:
        return _chain(pts)
    a, b = pts[0], pts[-1]
    lower = _side(pts, b, a)[::-1]
    upper = _side(pts, a, b)[::-1]
    # a final chain pass drops near-collinear vertices exactly as the small-input path does
    return _chain(_sorted_unique(np.array([a] + lower + [b] + upper)))


def polygon_area(poly) -> float:
    p = np.asarray(poly, dtype=float).reshape(-1, 2)
    if len(p) < 3:
        return 0.0
    x, y = p[:, 0], p[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def min_area_rect(points_xy):
    """Minimum-area enclosing rectangle via rotating calipers over hull edges.

    Returns ``(center_xy, angle, (half_len_along_edge, half_len_across))`` or
    None when the points are collinear.
    """
    hull = convex_hull(points_xy)
    if len(hull) < 3 or polygon_area(hull) <= 1e-15:
        return None
    edges = np.roll(hull, -1, axis=0) - hull
    lengths = np.hypot(edges[:, 0], edges[:, 1])
    e = edges / lengths[:, None]
    n = np.stack([-e[:, 1], e[:, 0]], axis=1)
    along = hull @ e.T  # (hull pts, edges)
    across = hull @ n.T
    lo_a, hi_a = along.min(0), along.max(0)
    lo_n, hi_n = across.min(0), across.max(0)
    areas = (hi_a - lo_a) * (hi_n - lo_n)
    i = int(np.argmin(areas))
    mid_a, mid_n = (lo_a[i] + hi_a[i]) / 2, (lo_n[i] + hi_n[i]) / 2
    center = e[i] * mid_a + n[i] * mid_n
    angle = math.atan2(e[i, 1], e[i, 0])
    return center, angle, ((hi_a[i] - lo_a[i]) / 2, (hi_n[i] - lo_n[i]) / 2)


def canonical_yaw(angle: float, ex: float, ey: float) -> tuple[float, float, float]:
    k = math.floor(angle / HALF_PI)
    yaw = angle - k * HALF_PI
    if k % 2:
        ex, ey = ey, ex
    if yaw >= HALF_PI - 1e-15:
        yaw = 0.0
        ex, ey = ey, ex
    return yaw, ex, ey


def trim_points(points, trim_pct: float) -> np.ndarray:
    """Drop points outside the central (1 - trim_pct) quantile band of any axis."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if trim_pct <= 0 or len(pts) < 3:
        return pts
    lo = np.quantile(pts, trim_pct / 2, axis=0)
    hi = np.quantile(pts, 1 - trim_pct / 2, axis=0)
    keep = np.all((pts >= lo) & (pts <= hi), axis=1)
    return pts[keep] if keep.sum() >= 3 else pts


def fit_obb_z(points, trim_pct: float = 0.02, min_half_extent: float = 0.0) -> ObbZ:
    """Z-aligned box around trimmed points, smallest footprint over all yaws.

    ``min_half_extent`` pads thin axes so a planar patch (say, only the top
    face of an object) keeps a nonzero volume for overlap tests.
    """
    pts = trim_points(points, trim_pct)
    if len(pts) == 0:
        return ObbZ((0.0, 0.0, 0.0), 0.0, (0.0, 0.0, 0.0), True)
    zlo, zhi = float(pts[:, 2].min()), float(pts[:, 2].max())
    cz, ez = (zlo + zhi) / 2, max((zhi - zlo) / 2, min_half_extent)
    rect = min_area_rect(pts[:, :2]) if len(pts) >= 3 else None
    if rect is None:
        lo, hi = pts[:, :2].min(0), pts[:, :2].max(0)
        c = (lo + hi) / 2
        return ObbZ((float(c[0]), float(c[1]), cz), 0.0,
                    (max(float(hi[0] - c[0]), min_half_extent), max(float(hi[1] - c[1]), min_half_extent), ez),
                    True)
    center, angle, (ex, ey) = rect
    yaw, ex, ey = canonical_yaw(angle, ex, ey)
    return ObbZ((float(center[0]), float(center[1]), cz), yaw,
                (max(float(ex), min_half_extent), max(float(ey), min_half_extent), ez))


def clip_convex(subject, clip) -> np.ndarray:
    """Sutherland-Hodgman clipping of a polygon by a convex CCW polygon."""
    out = [np.asarray(p, dtype=float) for p in subject]
    clip = np.asarray(clip, dtype=float)
    for i in range(len(clip)):
        if not out:
            break
        a, b = clip[i], clip[(i + 1) % len(clip)]
        edge = b - a

        def side(p):
            return edge[0] * (p[1] - a[1]) - edge[1] * (p[0] - a[0])

        inp, out = out, []
        s = inp[-1]
        ss = side(s)
        for e in inp:
            se = side(e)
            if se >= 0:
                if ss < 0:
                    out.append(s + (e - s) * (ss / (ss - se)))
                out.append(e)
            elif ss >= 0:
                out.append(s + (e - s) * (ss / (ss - se)))
            s, ss = e, se
    return np.array(out).reshape(-1, 2)


def intersection_volume(a: ObbZ, b: ObbZ) -> float:
    z0 = max(a.z_range[0], b.z_range[0])
    z1 = min(a.z_range[1], b.z_range[1])
    if z1 <= z0:
        return 0.0
    ra = math.hypot(a.half_extents[0], a.half_extents[1])
    rb = math.hypot(b.half_extents[0], b.half_extents[1])
    if math.hypot(a.center[0] - b.center[0], a.center[1] - b.center[1]) > ra + rb:
        return 0.0
    area = polygon_area(clip_convex(a.corners_xy(), b.corners_xy()))
    # clipping round-off must not push the overlap past the smaller box
    return min(area * (z1 - z0), a.volume, b.volume)


def box_iou(a: ObbZ, b: ObbZ, mode: str = "sum") -> float:
    """Overlap ratio of two boxes.

    ``mode="sum"`` divides the intersection by the sum of the two volumes
    (identical boxes score 0.5); ``mode="union"`` is the usual IoU.
    """
    va, vb = a.volume, b.volume
    inter = intersection_volume(a, b)
    if mode == "sum":
        denom = va + vb
    elif mode == "union":
        denom = va + vb - inter
    else:
        raise ValueError(f"unknown iou mode {mode!r}")
    return inter / denom if denom > 0 else 0.0


def box_iom(a: ObbZ, b: ObbZ) -> float:
    """Intersection over the smaller volume; 1.0 when one box contains the other."""
    m = min(a.volume, b.volume)
    if m <= 0:
        return 0.0
    return intersection_volume(a, b) / m
