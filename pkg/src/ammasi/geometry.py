"""Planar geometry primitives: points, polylines, polygons and the areal grid.

Coordinates are (lon, lat) decimal degrees treated as a flat plane. No
projection is applied, so every distance is in degree units.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

_KINDS = ("polyline", "polygon", "multi")


@dataclass(frozen=True)
class GeoPoint:
    lon: float
    lat: float

    def __post_init__(self):
        if not (math.isfinite(self.lon) and math.isfinite(self.lat)):
            raise ValueError(f"non-finite coordinate ({self.lon}, {self.lat})")

    def as_array(self) -> np.ndarray:
        return np.array([self.lon, self.lat], dtype=float)


def _as_vertices(coords) -> np.ndarray:
    arr = np.asarray(coords, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError(f"vertex list must have shape (n, 2), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("non-finite vertex")
    return arr


@dataclass(frozen=True, eq=False)
class Geometry:
    """A polyline, polygon, or multi-part union of both.

    Each entry of ``parts`` is an (n, 2) vertex array. ``polygon_ids`` maps
    every part to the polygon it bounds (exterior ring and holes share an
    id) or to -1 for open chains. A one-vertex open chain is a degenerate
    point, which is how point POIs are stored.
    """

    kind: str
    parts: tuple
    polygon_ids: tuple

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown geometry kind {self.kind!r}")
        if len(self.parts) != len(self.polygon_ids):
            raise ValueError("parts and polygon_ids differ in length")
        for part, pid in zip(self.parts, self.polygon_ids):
            if pid >= 0 and len(part) < 3:
                raise ValueError("polygon ring needs at least 3 vertices")
            if pid < 0 and len(part) < 1:
                raise ValueError("empty polyline part")

    @classmethod
    def polyline(cls, coords) -> "Geometry":
        return cls("polyline", (_as_vertices(coords),), (-1,))

    @classmethod
    def multi_polyline(cls, chains) -> "Geometry":
        parts = tuple(_as_vertices(c) for c in chains)
        kind = "polyline" if len(parts) == 1 else "multi"
        return cls(kind, parts, (-1,) * len(parts))

    @classmethod
    def point(cls, lon: float, lat: float) -> "Geometry":
        return cls("polyline", (_as_vertices([[lon, lat]]),), (-1,))

    @classmethod
    def polygon(cls, exterior, holes: Sequence = ()) -> "Geometry":
        rings = [_strip_closure(_as_vertices(exterior))]
        rings += [_strip_closure(_as_vertices(h)) for h in holes]
        return cls("polygon", tuple(rings), (0,) * len(rings))

    @classmethod
    def union(cls, geoms: Iterable["Geometry"]) -> "Geometry":
        """Multi-part union by concatenation; overlap is not resolved."""
        parts, ids = [], []
        next_id = 0
        for g in geoms:
            remap = {}
            for part, pid in zip(g.parts, g.polygon_ids):
                parts.append(part)
                if pid < 0:
                    ids.append(-1)
                else:
                    if pid not in remap:
                        remap[pid] = next_id
                        next_id += 1
                    ids.append(remap[pid])
        return cls("multi", tuple(parts), tuple(ids))

    @property
    def is_empty(self) -> bool:
        return len(self.parts) == 0

    def reversed(self) -> "Geometry":
        return Geometry(self.kind, tuple(p[::-1].copy() for p in self.parts), self.polygon_ids)

    def translated(self, dx: float, dy: float) -> "Geometry":
        shift = np.array([dx, dy])
        return Geometry(self.kind, tuple(p + shift for p in self.parts), self.polygon_ids)

    @cached_property
    def segments(self) -> np.ndarray:
        """All boundary segments as an (S, 4) array of x0, y0, x1, y1."""
        segs = []
        for part, pid in zip(self.parts, self.polygon_ids):
            if pid >= 0:
                nxt = np.roll(part, -1, axis=0)
                segs.append(np.hstack([part, nxt]))
            elif len(part) == 1:
                segs.append(np.hstack([part, part]))
            else:
                segs.append(np.hstack([part[:-1], part[1:]]))
        if not segs:
            return np.empty((0, 4))
        return np.vstack(segs)

    @cached_property
    def _polygon_rings(self) -> dict:
        rings: dict = {}
        for part, pid in zip(self.parts, self.polygon_ids):
            if pid >= 0:
                nxt = np.roll(part, -1, axis=0)
                rings.setdefault(pid, []).append(np.hstack([part, nxt]))
        return {pid: np.vstack(r) for pid, r in rings.items()}

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Even-odd containment for each point against every polygon part."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        inside = np.zeros(len(pts), dtype=bool)
        for edges in self._polygon_rings.values():
            inside |= _even_odd(pts, edges)
        return inside

    def distance(self, points: np.ndarray, chunk: int = 4096) -> np.ndarray:
        """Minimum planar distance from each point to the geometry; 0 inside polygons."""
        if self.is_empty:
            raise ValueError("empty geometry")
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        segs = self.segments
        best = np.full(len(pts), np.inf)
        for start in range(0, len(segs), chunk):
            d = _point_segment_distance(pts, segs[start:start + chunk])
            np.minimum(best, d.min(axis=1), out=best)
        if self._polygon_rings:
            best[self.contains(pts)] = 0.0
        return best


def _strip_closure(ring: np.ndarray) -> np.ndarray:
    if len(ring) > 1 and np.array_equal(ring[0], ring[-1]):
        return ring[:-1]
    return ring


def _point_segment_distance(pts: np.ndarray, segs: np.ndarray) -> np.ndarray:
    # (n, s) distances; zero-length segments degrade to point distance
    ax, ay, bx, by = (segs[:, i][None, :] for i in range(4))
    px, py = pts[:, 0:1], pts[:, 1:2]
    dx, dy = bx - ax, by - ay
    len2 = dx * dx + dy * dy
    with np.errstate(invalid="ignore", divide="ignore"):
        t = ((px - ax) * dx + (py - ay) * dy) / len2
    t = np.where(len2 > 0, np.clip(t, 0.0, 1.0), 0.0)
    cx = ax + t * dx - px
    cy = ay + t * dy - py
    return np.hypot(cx, cy)


def _even_odd(pts: np.ndarray, edges: np.ndarray) -> np.ndarray:
    px, py = pts[:, 0:1], pts[:, 1:2]
    x0, y0, x1, y1 = (edges[:, i][None, :] for i in range(4))
    straddle = (y0 > py) != (y1 > py)
    with np.errstate(invalid="ignore", divide="ignore"):
        x_cross = x0 + (py - y0) * (x1 - x0) / (y1 - y0)
    crossings = straddle & (px < x_cross)
    return (crossings.sum(axis=1) % 2) == 1


def dist_point_to_geometry(p: GeoPoint, g: Geometry) -> float:
    """Planar distance from ``p`` to the nearest part of ``g`` (0 when inside)."""
    if g.is_empty:
        raise ValueError("empty geometry")
    return float(g.distance(p.as_array()[None, :])[0])


@dataclass(frozen=True)
class ArealGrid:
    """An ``mx`` by ``my`` partition of a lon/lat bounding box.

    Cells are half-open ``[lo, hi)`` except the last column and row, which
    are closed. Points outside the box clamp to the nearest edge cell.
    """

    bbox: tuple
    mx: int
    my: int

    def __post_init__(self):
        min_lon, min_lat, max_lon, max_lat = (float(v) for v in self.bbox)
        if not (max_lon > min_lon and max_lat > min_lat):
            raise ValueError(f"degenerate bbox {self.bbox}")
        if self.mx < 1 or self.my < 1:
            raise ValueError("grid needs at least one cell per axis")
        object.__setattr__(self, "bbox", (min_lon, min_lat, max_lon, max_lat))

    @classmethod
    def around(cls, lonlat: np.ndarray, mx: int = 100, my: int = 100, pad: float = 0.01) -> "ArealGrid":
        """Bounding box of ``lonlat`` padded by ``pad`` of its extent per side."""
        lonlat = np.asarray(lonlat, dtype=float)
        lo, hi = lonlat.min(axis=0), lonlat.max(axis=0)
        span = np.where(hi > lo, hi - lo, 1e-6)
        lo, hi = lo - pad * span, hi + pad * span
        return cls((lo[0], lo[1], hi[0], hi[1]), mx, my)

    @property
    def n_cells(self) -> int:
        return self.mx * self.my

    @property
    def cell_size(self) -> tuple:
        min_lon, min_lat, max_lon, max_lat = self.bbox
        return ((max_lon - min_lon) / self.mx, (max_lat - min_lat) / self.my)

    def to_grid_coords(self, lonlat: np.ndarray) -> np.ndarray:
        """Continuous cell coordinates: integer part is the column/row before clamping."""
        min_lon, min_lat, max_lon, max_lat = self.bbox
        pts = np.atleast_2d(np.asarray(lonlat, dtype=float))
        gx = (pts[:, 0] - min_lon) * self.mx / (max_lon - min_lon)
        gy = (pts[:, 1] - min_lat) * self.my / (max_lat - min_lat)
        return np.column_stack([gx, gy])

    def cell_xy(self, lonlat: np.ndarray) -> tuple:
        g = self.to_grid_coords(lonlat)
        ix = np.clip(np.floor(g[:, 0]), 0, self.mx - 1).astype(np.int64)
        iy = np.clip(np.floor(g[:, 1]), 0, self.my - 1).astype(np.int64)
        return ix, iy

    def assign(self, lonlat: np.ndarray) -> np.ndarray:
        """Row-major cell index ``iy * mx + ix`` for each point."""
        ix, iy = self.cell_xy(lonlat)
        return iy * self.mx + ix


def assign_cell(p: GeoPoint, grid: ArealGrid) -> int:
    return int(grid.assign(p.as_array()[None, :])[0])


def _segment_cells(grid: ArealGrid, a: np.ndarray, b: np.ndarray) -> list:
    """Cells met by segment a-b, both endpoints already inside the closed bbox.

    Works in continuous grid coordinates: the segment is cut at every
    integer column/row crossing, each open piece contributes the cell of its
    midpoint and each cut point contributes its own cell.
    """
    ga, gb = grid.to_grid_coords(np.vstack([a, b]))
    d = gb - ga
    ts = [(0.0, None, None), (1.0, None, None)]
    for axis in (0, 1):
        if d[axis] == 0:
            continue
        lo, hi = sorted((ga[axis], gb[axis]))
        for k in range(int(math.ceil(lo)), int(math.floor(hi)) + 1):
            t = (k - ga[axis]) / d[axis]
            if 0.0 < t < 1.0:
                ts.append((t, axis, k))
    ts.sort(key=lambda item: item[0])

    def cell_of(g, fixed=None):
        ix = math.floor(g[0]) if fixed is None or fixed[0] != 0 else fixed[1]
        iy = math.floor(g[1]) if fixed is None or fixed[0] != 1 else fixed[1]
        ix = min(max(ix, 0), grid.mx - 1)
        iy = min(max(iy, 0), grid.my - 1)
        return iy * grid.mx + ix

    cells = [cell_of(ga)]
    for (t0, _, _), (t1, axis, k) in zip(ts[:-1], ts[1:]):
        if t1 > t0:
            cells.append(cell_of(ga + d * (0.5 * (t0 + t1))))
        if axis is not None:
            cells.append(cell_of(ga + d * t1, (axis, k)))
    cells.append(cell_of(gb))
    return cells


def _clamped_pieces(grid: ArealGrid, a: np.ndarray, b: np.ndarray) -> list:
    # Clamping is affine on each region between bbox lines, so cutting the
    # segment there and clamping the cut points gives the exact clamped image.
    min_lon, min_lat, max_lon, max_lat = grid.bbox
    d = b - a
    ts = {0.0, 1.0}
    for axis, bounds in ((0, (min_lon, max_lon)), (1, (min_lat, max_lat))):
        if d[axis] != 0:
            for bound in bounds:
                if not min(a[axis], b[axis]) < bound < max(a[axis], b[axis]):
                    continue
                t = (bound - a[axis]) / d[axis]
                if 0.0 < t < 1.0:
                    ts.add(t)
    lo = np.array([min_lon, min_lat])
    hi = np.array([max_lon, max_lat])
    knots = [np.clip(a if t == 0.0 else b if t == 1.0 else a + d * t, lo, hi) for t in sorted(ts)]
    return list(zip(knots[:-1], knots[1:]))


def line_cells(line: Geometry, grid: ArealGrid) -> list:
    """Every cell a polyline passes through, ordered by first visit."""
    if line.kind == "polygon" or any(pid >= 0 for pid in line.polygon_ids):
        raise ValueError(f"line_cells expects a polyline, got {line.kind}")
    seen: dict = {}
    for part in line.parts:
        if len(part) == 1:
            seen.setdefault(int(grid.assign(part)[0]), None)
            continue
        for a, b in zip(part[:-1], part[1:]):
            for pa, pb in _clamped_pieces(grid, a, b):
                for c in _segment_cells(grid, pa, pb):
                    seen.setdefault(c, None)
    return list(seen)
