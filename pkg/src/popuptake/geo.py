"""Planar geometry for grid/polygon harmonization.

All coordinates are plain lon/lat degrees treated as a flat plane. This is an
approximation (no geodesic areas), but every quantity consumed downstream is a
ratio of areas computed in the same plane, so the distortion cancels out for
the small cells involved.

Polygons are numpy arrays of shape (n, 2) holding an unclosed outer ring in
counter-clockwise or clockwise order. A polygon with holes is a list of rings
(first = outer, rest = holes); a multipolygon is a list of such lists.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class Rect:
    """Axis-aligned lon/lat rectangle."""

    min_x: float
    min_y: float
    max_x: float
    max_y: float

    def __post_init__(self):
        if not (self.max_x > self.min_x and self.max_y > self.min_y):
            raise GeometryError("empty geometry")

    @property
    def area(self) -> float:
        return (self.max_x - self.min_x) * (self.max_y - self.min_y)

    def corners(self) -> np.ndarray:
        return np.array(
            [
                (self.min_x, self.min_y),
                (self.max_x, self.min_y),
                (self.max_x, self.max_y),
                (self.min_x, self.max_y),
            ]
        )

    def intersects_bbox(self, ring: np.ndarray) -> bool:
        xs, ys = ring[:, 0], ring[:, 1]
        return not (
            xs.max() <= self.min_x
            or xs.min() >= self.max_x
            or ys.max() <= self.min_y
            or ys.min() >= self.max_y
        )


def shoelace_area(ring: np.ndarray) -> float:
    """Signed area of a ring via the shoelace formula (positive if CCW)."""
    if len(ring) < 3:
        return 0.0
    x, y = ring[:, 0], ring[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def _clip_halfplane(ring, axis, bound, keep_below):
    """One Sutherland-Hodgman pass against an axis-aligned half-plane.

    Keeps points with coord <= bound (keep_below) or >= bound (not keep_below).
    """
    if len(ring) == 0:
        return ring
    out = []
    n = len(ring)
    for i in range(n):
        cur = ring[i]
        nxt = ring[(i + 1) % n]
        if keep_below:
            cur_in = cur[axis] <= bound
            nxt_in = nxt[axis] <= bound
        else:
            cur_in = cur[axis] >= bound
            nxt_in = nxt[axis] >= bound
        if cur_in:
            out.append(cur)
        if cur_in != nxt_in:
            # edge crosses the boundary; denominator nonzero since exactly one
            # endpoint is strictly on each side or on the line
            t = (bound - cur[axis]) / (nxt[axis] - cur[axis])
            cross = cur + t * (nxt - cur)
            cross[axis] = bound
            out.append(cross)
    return np.array(out) if out else np.empty((0, 2))


def clip_ring_to_rect(ring: np.ndarray, rect: Rect) -> np.ndarray:
    """Clip a ring to a rectangle (Sutherland-Hodgman, four passes)."""
    ring = np.asarray(ring, dtype=float)
    out = _clip_halfplane(ring, 0, rect.min_x, keep_below=False)
    out = _clip_halfplane(out, 0, rect.max_x, keep_below=True)
    out = _clip_halfplane(out, 1, rect.min_y, keep_below=False)
    out = _clip_halfplane(out, 1, rect.max_y, keep_below=True)
    return out


def _as_ring_lists(polygon) -> list[list[np.ndarray]]:
    """Normalise the accepted polygon forms to a list of ring lists."""
    if isinstance(polygon, np.ndarray):
        return [[polygon]]
    if isinstance(polygon, (list, tuple)):
        if len(polygon) == 0:
            raise GeometryError("empty geometry")
        first = polygon[0]
        if isinstance(first, np.ndarray):
            return [list(polygon)]  # one polygon with holes
        return [list(p) if not isinstance(p, np.ndarray) else [p] for p in polygon]
    raise GeometryError(f"unsupported polygon type {type(polygon)!r}")


def overlap_area(rect: Rect, polygon) -> float:
    """Area of rect ∩ polygon; holes subtract, multipolygon parts add."""
    total = 0.0
    for rings in _as_ring_lists(polygon):
        for k, ring in enumerate(rings):
            ring = np.asarray(ring, dtype=float)
            if len(ring) < 3:
                raise GeometryError("ring with fewer than 3 vertices")
            if not rect.intersects_bbox(ring):
                continue
            clipped = clip_ring_to_rect(ring, rect)
            a = abs(shoelace_area(clipped))
            total += a if k == 0 else -a
    return max(total, 0.0)


def overlap_fraction(rect: Rect, polygon) -> float:
    """Fraction of the rectangle's area covered by the polygon, in [0, 1]."""
    frac = overlap_area(rect, polygon) / rect.area
    return min(max(frac, 0.0), 1.0)


def polygon_area(polygon) -> float:
    """Total area of a polygon/multipolygon (holes subtracted)."""
    total = 0.0
    for rings in _as_ring_lists(polygon):
        for k, ring in enumerate(rings):
            a = abs(shoelace_area(np.asarray(ring, dtype=float)))
            total += a if k == 0 else -a
    return total


def polygon_bbox(polygon) -> tuple[float, float, float, float]:
    xs, ys = [], []
    for rings in _as_ring_lists(polygon):
        outer = np.asarray(rings[0], dtype=float)
        xs.extend([outer[:, 0].min(), outer[:, 0].max()])
        ys.extend([outer[:, 1].min(), outer[:, 1].max()])
    return min(xs), min(ys), max(xs), max(ys)
