"""Scalar 3-D point and axis-aligned-cuboid primitives.

Points are plain length-3 sequences (tuples, lists or numpy arrays) of
finite float coordinates in meters. Cuboids are closed sets: boundary
points count as inside. Half-open cell ownership for grid downsampling is
a tree-level concern and lives in :mod:`liomap.ikdtree`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

__all__ = [
    "AlignedCuboid",
    "BoxRelation",
    "dist_sq",
    "cuboid_relate",
    "min_dist_sq_to_cuboid",
    "as_finite_xyz",
]


def as_finite_xyz(p) -> tuple[float, float, float]:
    """Coerce a length-3 point to floats, rejecting NaN/Inf coordinates."""
    x, y, z = float(p[0]), float(p[1]), float(p[2])
    if not (math.isfinite(x) and math.isfinite(y) and math.isfinite(z)):
        raise ValueError(f"point has non-finite coordinates: ({x}, {y}, {z})")
    return x, y, z


class BoxRelation(Enum):
    DISJOINT = "disjoint"
    CONTAINED = "contained"  # first cuboid inside second (closed comparison)
    OVERLAPPING = "overlapping"


@dataclass(frozen=True)
class AlignedCuboid:
    """Closed axis-aligned cuboid given by two opposite vertices.

    Degenerate (zero-volume) cuboids are allowed; a single point ``p`` has
    the range ``[p, p]``.
    """

    min_vertex: tuple[float, float, float]
    max_vertex: tuple[float, float, float]

    def __post_init__(self):
        lo = as_finite_xyz(self.min_vertex)
        hi = as_finite_xyz(self.max_vertex)
        if lo[0] > hi[0] or lo[1] > hi[1] or lo[2] > hi[2]:
            raise ValueError(f"cuboid min {lo} exceeds max {hi}")
        object.__setattr__(self, "min_vertex", lo)
        object.__setattr__(self, "max_vertex", hi)

    @classmethod
    def from_center(cls, center, half_extent) -> "AlignedCuboid":
        cx, cy, cz = as_finite_xyz(center)
        hx, hy, hz = as_finite_xyz(half_extent)
        return cls((cx - hx, cy - hy, cz - hz), (cx + hx, cy + hy, cz + hz))

    def contains_point(self, p) -> bool:
        x, y, z = float(p[0]), float(p[1]), float(p[2])
        lo, hi = self.min_vertex, self.max_vertex
        return (lo[0] <= x <= hi[0] and lo[1] <= y <= hi[1]
                and lo[2] <= z <= hi[2])

    def center(self) -> tuple[float, float, float]:
        lo, hi = self.min_vertex, self.max_vertex
        return ((lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0,
                (lo[2] + hi[2]) / 2.0)


def dist_sq(p, q) -> float:
    """Squared Euclidean distance between two points, in m^2."""
    dx = float(p[0]) - float(q[0])
    dy = float(p[1]) - float(q[1])
    dz = float(p[2]) - float(q[2])
    return dx * dx + dy * dy + dz * dz


def cuboid_relate(a: AlignedCuboid, b: AlignedCuboid) -> BoxRelation:
    """Classify cuboid ``a`` against ``b``: disjoint, contained in b, or overlapping.

    Closed semantics: cuboids that only share boundary points overlap.
    """
    alo, ahi = a.min_vertex, a.max_vertex
    blo, bhi = b.min_vertex, b.max_vertex
    for i in range(3):
        if ahi[i] < blo[i] or alo[i] > bhi[i]:
            return BoxRelation.DISJOINT
    for i in range(3):
        if alo[i] < blo[i] or ahi[i] > bhi[i]:
            return BoxRelation.OVERLAPPING
    return BoxRelation.CONTAINED


def min_dist_sq_to_cuboid(p, c: AlignedCuboid) -> float:
    """Squared distance from a point to the nearest point of a cuboid.

    Zero when the point lies inside (or on the boundary of) the cuboid.
    """
    x, y, z = float(p[0]), float(p[1]), float(p[2])
    lo, hi = c.min_vertex, c.max_vertex
    dx = (lo[0] - x) if x < lo[0] else ((x - hi[0]) if x > hi[0] else 0.0)
    dy = (lo[1] - y) if y < lo[1] else ((y - hi[1]) if y > hi[1] else 0.0)
    dz = (lo[2] - z) if z < lo[2] else ((z - hi[2]) if z > hi[2] else 0.0)
    return dx * dx + dy * dy + dz * dz
