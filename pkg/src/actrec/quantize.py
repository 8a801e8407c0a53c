"""Spatial cells (grid, Voronoi, circular) and time-slot alignment."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .domain import ActivityPoint, StopPoint, TimeSlot


@dataclass(frozen=True)
class GridQuantizer:
    cell_width: float = 800.0
    cell_height: float = 800.0
    x0: float = 0.0
    y0: float = 0.0

    kind = "grid"

    def __post_init__(self):
        if not (self.cell_width > 0 and self.cell_height > 0):
            raise ValueError("grid cell sizes must be positive")

    def cell(self, x: float, y: float) -> tuple[int, int]:
        return grid_cell(self, x, y)

    def cells(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Vectorised cell ids as an (n, 2) int array."""
        cx = np.floor((np.asarray(x, float) - self.x0) / self.cell_width).astype(np.int64)
        cy = np.floor((np.asarray(y, float) - self.y0) / self.cell_height).astype(np.int64)
        return np.stack([cx, cy], axis=1)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "cell_width": self.cell_width, "cell_height": self.cell_height,
                "x0": self.x0, "y0": self.y0}


def grid_cell(q: GridQuantizer, x: float, y: float) -> tuple[int, int]:
    return (math.floor((x - q.x0) / q.cell_width), math.floor((y - q.y0) / q.cell_height))


@dataclass(frozen=True, eq=False)
class VoronoiQuantizer:
    centroids: np.ndarray

    kind = "voronoi"

    def __post_init__(self):
        c = np.asarray(self.centroids, dtype=float).reshape(-1, 2)
        if len(c) < 1:
            raise ValueError("Voronoi quantizer needs at least one centroid")
        object.__setattr__(self, "centroids", c)

    @property
    def k(self) -> int:
        return len(self.centroids)

    def cell(self, x: float, y: float) -> int:
        return voronoi_cell(self, x, y)

    def cells(self, x: np.ndarray, y: np.ndarray, chunk: int = 4096) -> np.ndarray:
        pts = np.column_stack([np.asarray(x, float), np.asarray(y, float)])
        out = np.empty(len(pts), dtype=np.int64)
        for s in range(0, len(pts), chunk):
            p = pts[s:s + chunk]
            d2 = ((p[:, None, :] - self.centroids[None, :, :]) ** 2).sum(axis=2)
            out[s:s + chunk] = np.argmin(d2, axis=1)  # first minimum -> lowest index on ties
        return out

    def to_dict(self) -> dict:
        return {"kind": self.kind, "centroids": self.centroids.tolist()}


def fit_voronoi(points, k: int, seed: int = 0) -> VoronoiQuantizer:
    """k-means (k-means++ init, Lloyd iterations) centroids as Voronoi generators."""
    from sklearn.cluster import KMeans

    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(pts) == 0:
        raise ValueError("cannot fit Voronoi cells to an empty point set")
    if k < 1:
        raise ValueError("k must be >= 1")
    n_distinct = len(np.unique(pts, axis=0))
    if k > n_distinct:
        raise ValueError(f"k={k} exceeds the {n_distinct} distinct points")
    if k == 1:
        return VoronoiQuantizer(pts.mean(axis=0, keepdims=True))
    km = KMeans(n_clusters=k, init="k-means++", n_init=1, algorithm="lloyd", random_state=seed)
    km.fit(pts)
    return VoronoiQuantizer(km.cluster_centers_)


def voronoi_cell(q: VoronoiQuantizer, x: float, y: float) -> int:
    return int(q.cells(np.array([x]), np.array([y]))[0])


@dataclass(frozen=True)
class CircularQuantizer:
    radius: float = 300.0

    kind = "circular"

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("radius must be positive")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "radius": self.radius}


def circular_neighborhood(q: CircularQuantizer, centre, population) -> np.ndarray:
    """Indices of population points within ``q.radius`` of ``centre`` (closed ball)."""
    pop = np.asarray(population, dtype=float).reshape(-1, 2)
    if len(pop) == 0:
        return np.zeros(0, dtype=np.int64)
    d = np.hypot(pop[:, 0] - centre[0], pop[:, 1] - centre[1])
    return np.flatnonzero(d <= q.radius)


def ball_members(tree: cKDTree, xy: np.ndarray, queries: np.ndarray, radius: float) -> list[np.ndarray]:
    """Closed-ball membership for many queries, exact at the boundary."""
    cands = tree.query_ball_point(queries, r=radius * (1 + 1e-9) + 1e-9)
    out = []
    for q, c in zip(queries, cands):
        c = np.asarray(c, dtype=np.int64)
        if len(c):
            c.sort()
            d = np.hypot(xy[c, 0] - q[0], xy[c, 1] - q[1])
            c = c[d <= radius]
        out.append(c)
    return out


def quantizer_from_dict(d: dict):
    kind = d["kind"]
    if kind == "grid":
        return GridQuantizer(d["cell_width"], d["cell_height"], d.get("x0", 0.0), d.get("y0", 0.0))
    if kind == "voronoi":
        return VoronoiQuantizer(np.asarray(d["centroids"], dtype=float))
    if kind == "circular":
        return CircularQuantizer(d["radius"])
    raise ValueError(f"unknown quantizer kind {kind!r}")


# -- time slots -------------------------------------------------------------

def _nearest_boundary(t: int, width_s: int) -> int:
    """Index of the slot boundary nearest to t; exact halves go to the earlier one."""
    a = 2 * t - width_s
    b = 2 * width_s
    return -((-a) // b)


def slot_range(t_start: int, t_end: int, slot_minutes: int) -> tuple[int, int]:
    """Inclusive range of absolute slot numbers (slots since the epoch) covered by a stop."""
    if 1440 % slot_minutes:
        raise ValueError(f"slot width {slot_minutes} does not divide 1440")
    if not t_start < t_end:
        raise ValueError("time_slots needs t_start < t_end")
    w = slot_minutes * 60
    return _nearest_boundary(int(t_start), w), _nearest_boundary(int(t_end), w)


def time_slots(t_start: int, t_end: int, slot_minutes: int) -> tuple[TimeSlot, ...]:
    """Ordered slots covered by the interval ``[t_start, t_end]`` (seconds since epoch).

    Each endpoint is aligned to its nearest slot boundary, ties going to the
    earlier one, so 8:53-9:08 with 10-minute slots covers 8:50, 9:00 and 9:10.
    """
    lo, hi = slot_range(t_start, t_end, slot_minutes)
    per_day = 1440 // slot_minutes
    return tuple(TimeSlot(s // per_day, s % per_day, slot_minutes) for s in range(lo, hi + 1))


def quantize_stop(stop: StopPoint, quantizer, slot_minutes: int) -> ActivityPoint:
    if isinstance(quantizer, CircularQuantizer):
        cell = (stop.x, stop.y)
    else:
        cell = quantizer.cell(stop.x, stop.y)
    return ActivityPoint(stop, cell, time_slots(stop.t_start, stop.t_end, slot_minutes), stop.label)

