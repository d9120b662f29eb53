"""House tables, GeoJSON geometry loading and the synthetic fixture generator."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .geometry import ArealGrid, Geometry
from .poi import POI_TYPES, proximity_matrix


class DataError(ValueError):
    """Malformed or inconsistent input data."""


@dataclass(frozen=True)
class HouseRecord:
    id: str
    lon: float
    lat: float
    attrs: tuple
    price: float


@dataclass
class HouseData:
    """Column-oriented house table; ``poi`` is filled once proximities exist."""

    ids: list
    lonlat: np.ndarray
    attrs: np.ndarray
    price: np.ndarray
    poi: np.ndarray | None = None
    attr_names: tuple = ()

    def __post_init__(self):
        self.lonlat = np.asarray(self.lonlat, dtype=float).reshape(-1, 2)
        self.attrs = np.asarray(self.attrs, dtype=float)
        if self.attrs.ndim == 1:
            self.attrs = self.attrs[:, None]
        self.price = np.asarray(self.price, dtype=float).ravel()
        n = len(self.ids)
        if not (len(self.lonlat) == len(self.attrs) == len(self.price) == n):
            raise DataError("house columns differ in length")
        if np.any(self.price <= 0):
            raise DataError("prices must be positive")
        if self.poi is not None:
            self.poi = np.asarray(self.poi, dtype=float).reshape(n, -1)

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def log_price(self) -> np.ndarray:
        return np.log(self.price)

    def subset(self, rows) -> "HouseData":
        rows = np.asarray(rows)
        return HouseData(
            [self.ids[i] for i in rows], self.lonlat[rows], self.attrs[rows], self.price[rows],
            None if self.poi is None else self.poi[rows], self.attr_names,
        )

    def with_poi(self, poi) -> "HouseData":
        return replace(self, poi=np.asarray(poi, dtype=float))

    def records(self) -> list:
        return [
            HouseRecord(self.ids[i], float(self.lonlat[i, 0]), float(self.lonlat[i, 1]),
                        tuple(float(v) for v in self.attrs[i]), float(self.price[i]))
            for i in range(len(self))
        ]

    @classmethod
    def from_records(cls, records: Sequence[HouseRecord]) -> "HouseData":
        return cls(
            [r.id for r in records],
            [[r.lon, r.lat] for r in records],
            [list(r.attrs) for r in records],
            [r.price for r in records],
        )


def load_houses(path) -> HouseData:
    """Read ``id,lon,lat,price,attr_1..attr_k``; errors name the 1-based file row."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        required = ["id", "lon", "lat", "price"]
        missing = [c for c in required if c not in header]
        if missing:
            raise DataError(f"{path}: missing column(s) {missing}")
        attr_cols = [i for i, h in enumerate(header) if h not in required]
        if not attr_cols:
            raise DataError(f"{path}: no attribute columns")
        pos = {c: header.index(c) for c in required}
        ids, lonlat, attrs, price = [], [], [], []
        for row_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}: row {row_no} has {len(row)} fields, expected {len(header)}")
            try:
                lon, lat, p = float(row[pos["lon"]]), float(row[pos["lat"]]), float(row[pos["price"]])
                a = [float(row[i]) for i in attr_cols]
            except ValueError as exc:
                raise DataError(f"{path}: row {row_no}: non-numeric value ({exc})") from None
            if not all(math.isfinite(v) for v in [lon, lat, p, *a]):
                raise DataError(f"{path}: row {row_no}: non-finite value")
            if p <= 0:
                raise DataError(f"{path}: row {row_no}: price must be positive, got {p}")
            ids.append(row[pos["id"]])
            lonlat.append((lon, lat))
            attrs.append(a)
            price.append(p)
    if not ids:
        raise DataError(f"{path}: no data rows")
    return HouseData(ids, lonlat, attrs, price, attr_names=tuple(header[i] for i in attr_cols))


def write_houses(path, data: HouseData) -> None:
    names = data.attr_names or tuple(f"attr_{k + 1}" for k in range(data.attrs.shape[1]))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "lon", "lat", "price", *names])
        for i in range(len(data)):
            w.writerow([data.ids[i], repr(float(data.lonlat[i, 0])), repr(float(data.lonlat[i, 1])),
                        repr(float(data.price[i])), *(repr(float(v)) for v in data.attrs[i])])


def write_poi_table(path, ids, poi_types, prox) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", *poi_types])
        for hid, row in zip(ids, prox):
            w.writerow([hid, *(repr(float(v)) for v in row)])


def load_poi_table(path, ids=None) -> tuple:
    """Returns ``(poi_types, matrix)``; rows are reordered to ``ids`` when given."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    types = rows[0][1:]
    table = {r[0]: [float(v) for v in r[1:]] for r in rows[1:] if r}
    if ids is None:
        return types, np.array([table[r[0]] for r in rows[1:] if r])
    missing = [i for i in ids if i not in table]
    if missing:
        raise DataError(f"{path}: no POI row for house(s) {missing[:5]}")
    return types, np.array([table[i] for i in ids])


_POLYGONAL = {"Polygon", "MultiPolygon", "Point", "MultiPoint"}
_LINEAR = {"LineString", "MultiLineString"}


def _feature_geometry(geom: Mapping) -> Geometry:
    kind, coords = geom["type"], geom["coordinates"]
    if kind == "Polygon":
        return Geometry.polygon(coords[0], coords[1:])
    if kind == "MultiPolygon":
        return Geometry.union(Geometry.polygon(p[0], p[1:]) for p in coords)
    if kind == "Point":
        return Geometry.point(coords[0], coords[1])
    if kind == "MultiPoint":
        return Geometry.union(Geometry.point(c[0], c[1]) for c in coords)
    if kind == "LineString":
        return Geometry.polyline(coords)
    if kind == "MultiLineString":
        return Geometry.multi_polyline(coords)
    raise DataError(f"unsupported geometry type {kind}")


def load_geojson(path, expect: str):
    """Load POI or road geometry from a GeoJSON FeatureCollection.

    ``expect="polygon"`` groups features by their ``poi_type`` property into
    one union geometry per type (points are accepted as degenerate
    polygons). ``expect="line"`` returns a list with one polyline geometry
    per road feature.
    """
    if expect not in ("polygon", "line"):
        raise ValueError(f"expect must be 'polygon' or 'line', got {expect!r}")
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("type") != "FeatureCollection":
        raise DataError(f"{path}: not a FeatureCollection")
    allowed = _POLYGONAL if expect == "polygon" else _LINEAR
    features = doc.get("features", [])
    bad = [
        str(f.get("id", i)) for i, f in enumerate(features)
        if (f.get("geometry") or {}).get("type") not in allowed
    ]
    if bad:
        raise DataError(f"{path}: geometry kind does not match {expect!r} for feature(s) {bad}")
    if expect == "line":
        return [_feature_geometry(f["geometry"]) for f in features]
    groups: dict = {}
    for i, f in enumerate(features):
        ptype = (f.get("properties") or {}).get("poi_type")
        if ptype is None:
            raise DataError(f"{path}: feature {f.get('id', i)} has no poi_type property")
        groups.setdefault(ptype, []).append(_feature_geometry(f["geometry"]))
    return {k: Geometry.union(v) for k, v in groups.items()}


def _ring_coords(arr) -> list:
    ring = [[float(x), float(y)] for x, y in arr]
    return ring + [ring[0]]


def write_geojson(path, geoms, prop_key: str = "poi_type") -> None:
    """Write a mapping of type -> geometry (POIs) or a list of polylines (roads)."""
    features = []
    items = geoms.items() if isinstance(geoms, Mapping) else ((None, g) for g in geoms)
    for fid, (key, g) in enumerate(items):
        if any(pid >= 0 for pid in g.polygon_ids):
            polys: dict = {}
            for part, pid in zip(g.parts, g.polygon_ids):
                if pid >= 0:
                    polys.setdefault(pid, []).append(_ring_coords(part))
            points = [[float(p[0, 0]), float(p[0, 1])] for p, pid in zip(g.parts, g.polygon_ids) if pid < 0]
            for rings in polys.values():
                features.append({"type": "Feature", "id": len(features),
                                 "properties": {prop_key: key},
                                 "geometry": {"type": "Polygon", "coordinates": rings}})
            if points:
                features.append({"type": "Feature", "id": len(features), "properties": {prop_key: key},
                                 "geometry": {"type": "MultiPoint", "coordinates": points}})
        elif key is None:
            chains = [[[float(x), float(y)] for x, y in p] for p in g.parts]
            geom = ({"type": "LineString", "coordinates": chains[0]} if len(chains) == 1
                    else {"type": "MultiLineString", "coordinates": chains})
            features.append({"type": "Feature", "id": len(features), "properties": {}, "geometry": geom})
        else:
            points = [[float(p[0, 0]), float(p[0, 1])] for p in g.parts]
            features.append({"type": "Feature", "id": len(features), "properties": {prop_key: key},
                             "geometry": {"type": "MultiPoint", "coordinates": points}})
    with open(path, "w") as fh:
        json.dump({"type": "FeatureCollection", "features": features}, fh, indent=1, sort_keys=True)
        fh.write("\n")


@dataclass
class SyntheticFixture:
    houses: HouseData
    poi_geoms: dict
    roads: list
    grid: ArealGrid
    beta: float
    components: dict = field(default_factory=dict)
    weights: dict = field(default_factory=dict)

    def log_price_truth(self) -> np.ndarray:
        """Noise-free log price."""
        return self.components["base"] + sum(
            self.components["scale"] * w * self.components[k] for k, w in self.weights.items()
        )


DEFAULT_BBOX = (-84.60, 37.90, -84.20, 38.30)


def _unit(v: np.ndarray) -> np.ndarray:
    sd = v.std()
    return (v - v.mean()) / sd if sd > 0 else np.zeros_like(v)


def gen_synthetic(
    seed: int,
    n_houses: int = 500,
    n_poi_types: int = 15,
    grid: ArealGrid | None = None,
    planted: Mapping[str, float] | None = None,
    beta: float = 0.03,
    n_attrs: int = 5,
    noise: float = 0.02,
    price_scale: float = 0.3,
    base_price: float = 200_000.0,
    districts: tuple = (2, 2),
    poi_per_type: int = 3,
) -> SyntheticFixture:
    """Seeded synthetic region with houses, POIs, roads and planted price signals.

    Log price is ``log(base_price) + price_scale * (A + w_p P + w_a C + w_n S) + noise * e``
    where A is a linear function of the attributes, P a linear function of
    the POI proximities at ``beta``, C a per-district effect and S a smooth
    spatial field, each rescaled to unit standard deviation. ``planted``
    holds ``poi_signal``, ``areal_signal`` and ``neighbor_signal`` weights
    (default 0). Roads form a street grid inside each district and never
    cross district borders, so road connectivity identifies districts.
    """
    if n_houses < 50:
        raise ValueError("need at least 50 houses")
    planted = dict(planted or {})
    unknown = set(planted) - {"poi_signal", "areal_signal", "neighbor_signal"}
    if unknown:
        raise ValueError(f"unknown planted signal(s) {sorted(unknown)}")
    w = {"poi": planted.get("poi_signal", 0.0), "areal": planted.get("areal_signal", 0.0),
         "neighbor": planted.get("neighbor_signal", 0.0)}
    grid = grid or ArealGrid(DEFAULT_BBOX, 20, 20)
    rng = np.random.default_rng([seed, 0])
    min_lon, min_lat, max_lon, max_lat = grid.bbox
    span = np.array([max_lon - min_lon, max_lat - min_lat])
    lo = np.array([min_lon, min_lat])

    lonlat = lo + span * (0.02 + 0.96 * rng.random((n_houses, 2)))
    attrs = rng.normal(size=(n_houses, n_attrs))
    attrs[:, 0] = np.round(2 + np.abs(attrs[:, 0]) * 1.5)
    attr_coef = rng.normal(size=n_attrs)

    poi_types = list(POI_TYPES[:n_poi_types]) if n_poi_types <= len(POI_TYPES) else [
        f"poi-{k}" for k in range(n_poi_types)]
    poi_geoms = {}
    for t in poi_types:
        members = []
        for _ in range(poi_per_type):
            c = lo + span * (0.05 + 0.9 * rng.random(2))
            if rng.random() < 0.6:
                half = span * rng.uniform(0.004, 0.02, size=2)
                members.append(Geometry.polygon([c - half, [c[0] + half[0], c[1] - half[1]], c + half,
                                                 [c[0] - half[0], c[1] + half[1]]]))
            else:
                members.append(Geometry.point(*c))
        poi_geoms[t] = Geometry.union(members)
    prox = proximity_matrix(lonlat, list(poi_geoms.values()), beta)
    poi_coef = rng.normal(size=len(poi_types))

    dx, dy = districts
    ix, iy = grid.cell_xy(lonlat)
    district_of_cell = lambda cx, cy: (cy * dy // grid.my) * dx + (cx * dx // grid.mx)
    district_effect = rng.normal(size=dx * dy)
    cell_effect = district_effect[district_of_cell(ix, iy)]

    bumps = lo + span * rng.random((6, 2))
    amp = rng.normal(size=6)
    width = span.mean() * 0.15
    d2 = ((lonlat[:, None, :] - bumps[None]) ** 2).sum(-1)
    smooth = (amp * np.exp(-d2 / (2 * width ** 2))).sum(1)

    comps = {
        "attr": _unit(attrs @ attr_coef),
        "poi": _unit(prox @ poi_coef),
        "areal": _unit(cell_effect),
        "neighbor": _unit(smooth),
    }
    log_p = math.log(base_price) + price_scale * (
        comps["attr"] + w["poi"] * comps["poi"] + w["areal"] * comps["areal"] + w["neighbor"] * comps["neighbor"]
    ) + noise * rng.normal(size=n_houses)

    roads = _district_streets(grid, districts, rng)
    houses = HouseData([f"h{i:05d}" for i in range(n_houses)], lonlat, attrs, np.exp(log_p),
                       attr_names=tuple(f"attr_{k + 1}" for k in range(n_attrs)))
    components = dict(comps, base=math.log(base_price), scale=price_scale, prox=prox,
                      district=district_of_cell(ix, iy))
    weights = {"attr": 1.0, "poi": w["poi"], "areal": w["areal"], "neighbor": w["neighbor"]}
    return SyntheticFixture(houses, poi_geoms, roads, grid, beta, components, weights)


def _district_streets(grid: ArealGrid, districts: tuple, rng: np.random.Generator) -> list:
    # One street along every row and column of each district, kept strictly
    # inside the district's cells so districts stay disconnected.
    dx, dy = districts
    cw, ch = grid.cell_size
    min_lon, min_lat = grid.bbox[0], grid.bbox[1]
    roads = []
    for d_y in range(dy):
        for d_x in range(dx):
            cx0, cx1 = d_x * grid.mx // dx, (d_x + 1) * grid.mx // dx
            cy0, cy1 = d_y * grid.my // dy, (d_y + 1) * grid.my // dy
            x_lo, x_hi = min_lon + (cx0 + 0.5) * cw, min_lon + (cx1 - 0.5) * cw
            y_lo, y_hi = min_lat + (cy0 + 0.5) * ch, min_lat + (cy1 - 0.5) * ch
            for cy in range(cy0, cy1):
                y = min_lat + (cy + rng.uniform(0.2, 0.8)) * ch
                roads.append(Geometry.polyline([[x_lo, y], [x_hi, y]]))
            for cx in range(cx0, cx1):
                x = min_lon + (cx + rng.uniform(0.2, 0.8)) * cw
                roads.append(Geometry.polyline([[x, y_lo], [x, y_hi]]))
    return roads


def train_test_split(data: HouseData, test_fraction: float, seed: int) -> tuple:
    rng = np.random.default_rng([seed, 5])
    order = rng.permutation(len(data))
    n_test = int(round(test_fraction * len(data)))
    return data.subset(np.sort(order[n_test:])), data.subset(np.sort(order[:n_test]))
