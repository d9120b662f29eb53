import json

import numpy as np
import pytest

from ammasi.data import (DataError, HouseData, HouseRecord, gen_synthetic, load_geojson, load_houses,
                         load_poi_table, train_test_split, write_geojson, write_houses, write_poi_table)
from ammasi.geometry import ArealGrid, Geometry
from ammasi.poi import POI_TYPES, beta_sweep, ols_fit


def _write(path, text):
    path.write_text(text)
    return path


def test_load_houses_three_rows(tmp_path):
    p = _write(tmp_path / "h.csv", "id,lon,lat,price,beds,area\n"
               "a,-84.5,38.0,100000,3,120\nb,-84.4,38.1,250000,4,200\nc,-84.3,38.2,90000,2,80\n")
    d = load_houses(p)
    assert len(d) == 3 and list(d.ids) == ["a", "b", "c"]
    assert d.attr_names == ("beds", "area")
    assert d.attrs[1].tolist() == [4.0, 200.0]
    assert d.lonlat[2].tolist() == [-84.3, 38.2]


@pytest.mark.parametrize("body, needle", [
    ("a,-84.5,38.0,0,3\n", "row 2"),
    ("a,-84.5,38.0,10,3\nb,-84.5,38.0,-5,3\n", "row 3"),
    ("a,-84.5,38.0,10,x\n", "row 2"),
    ("a,-84.5,38.0,10\n", "row 2"),
    ("a,-84.5,nan,10,1\n", "row 2"),
])
def test_load_houses_bad_rows(tmp_path, body, needle):
    p = _write(tmp_path / "h.csv", "id,lon,lat,price,beds\n" + body)
    with pytest.raises(DataError, match=needle):
        load_houses(p)


def test_load_houses_missing_columns(tmp_path):
    with pytest.raises(DataError, match="price"):
        load_houses(_write(tmp_path / "h.csv", "id,lon,lat,beds\na,1,2,3\n"))
    with pytest.raises(DataError, match="attribute"):
        load_houses(_write(tmp_path / "h2.csv", "id,lon,lat,price\na,1,2,3\n"))
    with pytest.raises(DataError):
        load_houses(_write(tmp_path / "h3.csv", ""))


def test_house_roundtrip_100_records(tmp_path):
    rng = np.random.default_rng(0)
    recs = [HouseRecord(f"r{i}", float(rng.uniform(-85, -84)), float(rng.uniform(38, 39)),
                        tuple(rng.normal(size=3)), float(rng.uniform(1e4, 1e6))) for i in range(100)]
    d = HouseData.from_records(recs)
    write_houses(tmp_path / "h.csv", d)
    back = load_houses(tmp_path / "h.csv")
    assert back.records() == recs


def test_house_data_validation():
    with pytest.raises(DataError):
        HouseData(["a"], [[0, 0]], [[1.0]], [-1.0])
    with pytest.raises(DataError):
        HouseData(["a", "b"], [[0, 0]], [[1.0]], [1.0])


def test_poi_table_roundtrip(tmp_path):
    prox = np.random.default_rng(1).random((4, 3))
    write_poi_table(tmp_path / "p.csv", ["a", "b", "c", "d"], ["park", "school", "mall"], prox)
    types, m = load_poi_table(tmp_path / "p.csv", ids=["d", "a"])
    assert types == ["park", "school", "mall"]
    assert np.array_equal(m, prox[[3, 0]])
    with pytest.raises(DataError):
        load_poi_table(tmp_path / "p.csv", ids=["zz"])


def _feature(fid, kind, coords, ptype=None):
    return {"type": "Feature", "id": fid, "properties": {"poi_type": ptype} if ptype else {},
            "geometry": {"type": kind, "coordinates": coords}}


def _square(x, y, h=0.01):
    return [[[x - h, y - h], [x + h, y - h], [x + h, y + h], [x - h, y + h], [x - h, y - h]]]


def test_load_geojson_groups_parks(tmp_path):
    doc = {"type": "FeatureCollection", "features": [
        _feature(1, "Polygon", _square(0, 0), "park"), _feature(2, "Polygon", _square(1, 1), "park"),
        _feature(3, "Point", [5, 5], "school")]}
    p = _write(tmp_path / "poi.geojson", json.dumps(doc))
    g = load_geojson(p, "polygon")
    assert set(g) == {"park", "school"}
    assert len(set(g["park"].polygon_ids)) == 2
    assert g["park"].distance(np.array([[1.0, 1.0], [0.5, 0.0]])).tolist()[0] == 0.0


def test_load_geojson_kind_mismatch(tmp_path):
    doc = {"type": "FeatureCollection", "features": [
        _feature("p1", "Polygon", _square(0, 0), "park"), _feature("r9", "LineString", [[0, 0], [1, 1]], "park")]}
    p = _write(tmp_path / "poi.geojson", json.dumps(doc))
    with pytest.raises(DataError, match="r9"):
        load_geojson(p, "polygon")
    with pytest.raises(DataError, match="p1"):
        load_geojson(p, "line")
    with pytest.raises(ValueError):
        load_geojson(p, "point")


def test_load_geojson_missing_poi_type(tmp_path):
    doc = {"type": "FeatureCollection", "features": [_feature(1, "Point", [0, 0])]}
    with pytest.raises(DataError, match="poi_type"):
        load_geojson(_write(tmp_path / "poi.geojson", json.dumps(doc)), "polygon")


def test_geojson_roundtrip_fixture(tmp_path):
    fx = gen_synthetic(0, n_houses=60)
    write_geojson(tmp_path / "poi.geojson", fx.poi_geoms)
    write_geojson(tmp_path / "roads.geojson", fx.roads)
    poi = load_geojson(tmp_path / "poi.geojson", "polygon")
    assert list(poi) == list(POI_TYPES) and len(poi) == 15
    pts = fx.houses.lonlat
    for t, g in fx.poi_geoms.items():
        assert np.allclose(poi[t].distance(pts), g.distance(pts), atol=1e-12)
    roads = load_geojson(tmp_path / "roads.geojson", "line")
    assert len(roads) == len(fx.roads)
    assert all(np.array_equal(a.parts[0], b.parts[0]) for a, b in zip(roads, fx.roads))


def test_gen_synthetic_deterministic():
    a = gen_synthetic(3, n_houses=80)
    b = gen_synthetic(3, n_houses=80)
    c = gen_synthetic(4, n_houses=80)
    assert np.array_equal(a.houses.price, b.houses.price)
    assert np.array_equal(a.houses.lonlat, b.houses.lonlat)
    assert not np.array_equal(a.houses.price, c.houses.price)
    with pytest.raises(ValueError):
        gen_synthetic(0, planted={"mystery": 1.0})


def test_gen_synthetic_planted_poi_signal_recoverable():
    fx = gen_synthetic(1, n_houses=400, planted={"poi_signal": 3.0})
    X = np.column_stack([fx.houses.attrs, fx.components["prox"]])
    assert ols_fit(X, fx.houses.log_price).r_squared > 0.9
    assert np.allclose(fx.log_price_truth(), fx.houses.log_price, atol=0.1)


def test_gen_synthetic_zero_weights_beta_sweep_flat():
    fx = gen_synthetic(2, n_houses=400, price_scale=0.0, noise=0.3)
    res = beta_sweep(fx.houses.lonlat, fx.houses.log_price, list(fx.poi_geoms.values()), [0.01, 0.03, 0.1])
    assert np.all(res.r_squared < 0.1)


def test_gen_synthetic_districts_and_roads():
    grid = ArealGrid((0.0, 0.0, 1.0, 1.0), 8, 8)
    fx = gen_synthetic(0, n_houses=100, grid=grid, districts=(2, 2))
    assert len(fx.roads) == 4 * (4 + 4)
    assert set(np.unique(fx.components["district"])) <= {0, 1, 2, 3}
    assert all(isinstance(r, Geometry) for r in fx.roads)


def test_train_test_split():
    fx = gen_synthetic(0, n_houses=100)
    tr, te = train_test_split(fx.houses, 0.2, 7)
    assert (len(tr), len(te)) == (80, 20)
    assert sorted(set(tr.ids) | set(te.ids)) == sorted(fx.houses.ids)
    tr2, _ = train_test_split(fx.houses, 0.2, 7)
    assert list(tr.ids) == list(tr2.ids)
