import math

import numpy as np
import pytest
from helpers import small_fixture
from sklearn.base import clone

from ammasi.areal import sinusoidal_pe
from ammasi.geometry import ArealGrid
from ammasi.metrics import male, mdape, price_metrics, rmse
from ammasi.model import (AmmasiConfig, AmmasiModel, AmmasiRegressor, ConfigError, PlateauSchedule, backward,
                          evaluate, forward, init_params, loss_male, loss_male_grad, sigma_sweep, split_validation,
                          train)
from ammasi.nn import flatten_params, grad_check

SMALL = dict(D=16, d=4, K=4, n_g=6, n_s=6)


@pytest.fixture(scope="module")
def fixture():
    return small_fixture(seed=0, n=120, planted={"poi_signal": 1.0})


def test_config_defaults():
    c = AmmasiConfig()
    assert (c.D, c.d, c.K, c.batch_size, c.lr0) == (64, 8, 8, 250, 0.008)
    assert (c.early_stop_patience, c.lr_reduce_patience, c.lr_reduce_factor) == (10, 5, 0.1)
    assert c.K * c.d == c.D
    assert (c.n_g, c.n_s, c.mask_direction) == (20, 20, "below")


def test_config_validation():
    with pytest.raises(ConfigError):
        AmmasiConfig(D=64, d=8, K=4)
    with pytest.raises(ConfigError):
        AmmasiConfig(location_mode="satellite")
    with pytest.raises(ConfigError):
        AmmasiConfig(sigma_g=0.0)
    with pytest.raises(ConfigError):
        AmmasiConfig.from_dict({"heads": 3})
    assert AmmasiConfig(location_mode="latlon_concat").location_mode == "latlon"
    assert AmmasiConfig.from_dict(AmmasiConfig(seed=4).to_dict()) == AmmasiConfig(seed=4)


def _batch(rng, cfg, b=4, n=6, fq=5, fr=6):
    return (rng.normal(size=(b, fq)), rng.normal(size=(b, n, fr)), rng.uniform(0, 0.05, (b, n)),
            rng.normal(size=(b, n, fr)), rng.uniform(0, 2, (b, n)), rng.normal(size=(b, cfg.D)))


def _jittered(cfg, rng, fq=5, fr=6, bias=0.0):
    p = init_params(cfg, fq, fr, rng, bias)
    for v in flatten_params(p).values():
        v += 0.1 * rng.normal(size=v.shape)
    return p


def test_zero_params_output_zero():
    cfg = AmmasiConfig(**SMALL)
    p = init_params(cfg, 5, 6, np.random.default_rng(0))
    for v in flatten_params(p).values():
        v[...] = 0.0
    pred, _ = forward(p, cfg, *_batch(np.random.default_rng(1), cfg))
    assert not pred.any()


def test_head_width_is_4d_for_every_mode(fixture):
    _, houses = fixture
    grid = ArealGrid.around(houses.lonlat, 10, 10)
    for mode in ("none", "latlon", "sinusoidal"):
        cfg = AmmasiConfig(location_mode=mode, **SMALL)
        m = AmmasiModel(cfg, houses, sinusoidal_pe(grid, 16), grid)
        assert m.params["head"]["w1"].shape == (4 * cfg.D, cfg.D)
        b = m.prepare(houses)
        assert b.areal.shape == (len(houses), cfg.D)
        if mode != "sinusoidal":
            assert not b.areal.any()
        assert b.query.shape[1] == houses.attrs.shape[1] + (2 if mode == "latlon" else 0)


def test_no_mask_equals_mask_free_attention():
    cfg = AmmasiConfig(sigma_g=None, sigma_s=None, **SMALL)
    rng = np.random.default_rng(2)
    p = _jittered(cfg, rng)
    q, rg, dg, rs, ds, ar = _batch(rng, cfg)
    pred, _ = forward(p, cfg, q, rg, dg, rs, ds, ar)

    def fc2(x, blk):
        h = x @ blk["w1"] + blk["b1"]
        a = np.where(h > 0, h, np.expm1(np.minimum(h, 0)))
        return a @ blk["w2"] + blk.get("b2", 0.0)

    def branch(x, refs, mp):
        outs = []
        for h in range(cfg.K):
            sub = lambda name: {k: v[h] for k, v in mp[name].items()}
            qh, kh, vh = fc2(x, sub("q")), fc2(refs, sub("k")), fc2(refs, sub("v"))
            z = kh @ qh / math.sqrt(cfg.d)
            w = np.exp(z - z.max())
            outs.append((w / w.sum()) @ vh)
        return np.concatenate(outs)

    for i in range(len(q)):
        z = np.concatenate([fc2(q[i], p["house"]), branch(q[i], rg[i], p["geo"]), branch(q[i], rs[i], p["sim"]), ar[i]])
        assert pred[i] == pytest.approx(float(fc2(z, p["head"])[0]), abs=1e-12)


def test_masked_geo_reference_is_invisible():
    cfg = AmmasiConfig(sigma_g=0.02, sigma_s=None, **SMALL)
    rng = np.random.default_rng(3)
    p = _jittered(cfg, rng)
    q, rg, dg, rs, ds, ar = _batch(rng, cfg)
    dg[:, :] = 0.03
    dg[:, 2] = 0.01  # masked under "below"
    base, cache = forward(p, cfg, q, rg, dg, rs, ds, ar)
    assert np.all(cache["geo"]["s"][:, :, 2] == 0.0)
    rg2 = rg.copy()
    rg2[:, 2] += 50.0
    assert np.array_equal(forward(p, cfg, q, rg2, dg, rs, ds, ar)[0], base)
    flipped = cfg.replace(mask_direction="above")
    _, cache = forward(p, flipped, q, rg, dg, rs, ds, ar)
    assert np.all(cache["geo"]["s"][:, :, [0, 1, 3, 4, 5]] == 0.0)


def test_full_gradient_small_model():
    cfg = AmmasiConfig(sigma_g=0.02, sigma_s=1.0, **SMALL)
    rng = np.random.default_rng(4)
    p = _jittered(cfg, rng, bias=12.0)
    batch = _batch(rng, cfg)
    y = np.exp(12.0 + rng.normal(size=4))

    def f(params):
        pred, cache = forward(params, cfg, *batch)
        loss, dpred = loss_male_grad(pred, y)
        return loss, backward(dpred, cache, params)

    assert grad_check(f, p) < 1e-4


def test_forward_shape_errors():
    cfg = AmmasiConfig(**SMALL)
    p = init_params(cfg, 5, 6, np.random.default_rng(0))
    q, rg, dg, rs, ds, ar = _batch(np.random.default_rng(1), cfg)
    with pytest.raises(ValueError):
        forward(p, cfg, q, rg, dg, rs, ds, ar[:, :3])
    with pytest.raises(ValueError):
        forward(p, cfg, q[:, :4], rg, dg, rs, ds, ar)
    with pytest.raises(ValueError):
        forward(p, cfg, q, rg[:, :0], dg[:, :0], rs, ds, ar)


def test_loss_male_examples():
    y = np.array([2.0, 5.0, 9.0])
    assert loss_male(np.log(y), y) == 0.0
    assert loss_male([0.0], [math.e]) == pytest.approx(1.0, abs=1e-15)
    rng = np.random.default_rng(5)
    y = rng.uniform(1, 100, 100)
    pred = rng.normal(2, 1, 100)
    assert loss_male(pred, y) == pytest.approx(sum(abs(math.log(a) - b) for a, b in zip(y, pred)) / 100, abs=1e-12)
    assert loss_male(pred + math.log(7.0), 7.0 * y) == pytest.approx(loss_male(pred, y), abs=1e-12)
    _, g = loss_male_grad([1.0, math.log(3.0)], [1.0, 3.0])
    assert g[1] == 0.0 and g[0] == 0.5
    with pytest.raises(ValueError):
        loss_male([0.0], [0.0])


def test_plateau_schedule_unrolled():
    s = PlateauSchedule(0.008)
    lrs = []
    s.update(1, 1.0)
    for epoch in range(2, 20):
        lrs.append(s.lr)
        s.update(epoch, 2.0)
        if s.stop:
            break
    assert epoch == 11 and s.best_epoch == 1
    assert lrs[:5] == [0.008] * 5 and lrs[5:] == [0.0008] * 5
    assert 0.008 * 0.1 == 0.0008


def test_training_protocol_frozen_lr(fixture):
    _, houses = fixture
    cfg = AmmasiConfig(lr0=0.0, max_epochs=50, **SMALL)
    res = train(houses, houses, cfg)
    assert res.best_epoch == 1 and len(res.history) == 1 + cfg.early_stop_patience
    assert res.stopped_early


def test_training_deterministic_and_improves(fixture):
    _, houses = fixture
    cfg = AmmasiConfig(max_epochs=8, **SMALL)
    a = train(houses, None, cfg)
    b = train(houses, None, cfg)
    assert a.history == b.history
    for k, v in flatten_params(a.model.params).items():
        assert np.array_equal(v, flatten_params(b.model.params)[k])
    assert a.history[-1].train_male < a.history[0].train_male
    c = train(houses, None, cfg.replace(seed=1))
    assert c.history != a.history


def test_train_rejects_empty_split(fixture):
    _, houses = fixture
    with pytest.raises(ValueError):
        train(houses.subset(np.arange(0)), houses, AmmasiConfig(**SMALL))


def test_split_validation(fixture):
    _, houses = fixture
    tr, va = split_validation(houses, 0.1, 0)
    assert len(va) == 12 and len(tr) == 108
    assert not set(tr.ids) & set(va.ids)
    assert split_validation(houses, 0.0, 0)[0] is houses


def test_evaluate_constant_predictor_closed_form(fixture):
    _, houses = fixture
    cfg = AmmasiConfig(**SMALL)
    model = AmmasiModel(cfg, houses)
    for v in flatten_params(model.params).values():
        v[...] = 0.0
    mean_log = houses.log_price.mean()
    model.params["head"]["b2"][:] = mean_log
    m = evaluate(model, houses)
    assert m.male == pytest.approx(np.mean(np.abs(houses.log_price - mean_log)), abs=1e-12)
    yhat = np.full(len(houses), math.exp(mean_log))
    assert m.rmse == pytest.approx(rmse(houses.price, yhat), rel=1e-12)
    assert m.mdape == pytest.approx(mdape(houses.price, yhat), rel=1e-12)


def test_evaluate_is_metrics_plumbing(fixture, monkeypatch):
    _, houses = fixture
    model = AmmasiModel(AmmasiConfig(**SMALL), houses)
    pred = model.predict(houses)
    assert evaluate(model, houses) == price_metrics(houses.price, pred)
    monkeypatch.setattr(model, "predict", lambda data: data.price.copy())
    perfect = evaluate(model, houses)
    assert (perfect.male, perfect.rmse, perfect.mdape) == (0.0, 0.0, 0.0)
    assert male(houses.price, pred) == evaluate(AmmasiModel(AmmasiConfig(**SMALL), houses), houses).male


def test_checkpoint_roundtrip(fixture, tmp_path):
    _, houses = fixture
    grid = ArealGrid.around(houses.lonlat, 8, 8)
    cfg = AmmasiConfig(max_epochs=2, location_mode="sinusoidal", use_poi=True, **SMALL)
    res = train(houses, None, cfg, sinusoidal_pe(grid, 16), grid)
    res.model.save(tmp_path / "a.ckpt")
    back = AmmasiModel.load(tmp_path / "a.ckpt")
    assert back.cfg == cfg
    assert np.array_equal(back.predict(houses), res.model.predict(houses))
    back.save(tmp_path / "b.ckpt")
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()


def test_model_requires_areal_table(fixture):
    _, houses = fixture
    with pytest.raises(ConfigError):
        AmmasiModel(AmmasiConfig(location_mode="node2vec", **SMALL), houses)
    grid = ArealGrid.around(houses.lonlat, 4, 4)
    with pytest.raises(ConfigError):
        AmmasiModel(AmmasiConfig(location_mode="sinusoidal", **SMALL), houses, sinusoidal_pe(grid, 8), grid)


def test_sigma_sweep_single_point_matches_direct_run(fixture):
    _, houses = fixture
    tr, va = split_validation(houses, 0.2, 0)
    cfg = AmmasiConfig(max_epochs=3, **SMALL)
    rows = sigma_sweep(tr, va, cfg, [(0.01, 0.5)], cells=[("-", "P")])
    direct = evaluate(train(tr, va, cfg.replace(sigma_g=0.01, sigma_s=0.5, use_poi=True)).model, va)
    assert len(rows) == 1 and rows[0].metrics == direct and rows[0].cell == "(-,P)"
    with pytest.raises(ValueError):
        sigma_sweep(tr, va, cfg, [])
    with pytest.raises(ConfigError):
        sigma_sweep(tr, va, cfg, [(0.01, 0.5)], cells=[("Q", "-")])


def test_sigma_sweep_default_cells_skip_missing_tables(fixture):
    _, houses = fixture
    tr, va = split_validation(houses, 0.2, 0)
    rows = sigma_sweep(tr, va, AmmasiConfig(max_epochs=1, **SMALL), [(0.01, 0.5)])
    assert [r.cell for r in rows] == ["(-,-)", "(-,P)", "(L,-)", "(L,P)"]


def test_sigma_sweep_seed_stability():
    _, houses = small_fixture(seed=2, n=200)
    tr, va = split_validation(houses, 0.2, 0)
    cfg = AmmasiConfig(max_epochs=60, **SMALL)
    a = sigma_sweep(tr, va, cfg, [(0.01, 0.05)], cells=[("-", "-")])
    b = sigma_sweep(tr, va, cfg.replace(seed=1), [(0.01, 0.05)], cells=[("-", "-")])
    assert abs(a[0].metrics.male - b[0].metrics.male) < 0.02


def test_regressor_estimator_api(fixture):
    _, houses = fixture
    X = np.column_stack([houses.lonlat, houses.attrs, houses.poi])
    est = AmmasiRegressor(n_poi=houses.poi.shape[1], use_poi=True, max_epochs=3, **SMALL)
    assert clone(est).get_params()["n_poi"] == houses.poi.shape[1]
    est.fit(X, houses.price)
    pred = est.predict(X)
    assert pred.shape == (len(X),) and np.all(pred > 0)
    assert len(est.history_) <= 3
    with pytest.raises(ValueError):
        est.predict(X[:, :-1])
    with pytest.raises(ValueError):
        AmmasiRegressor(max_epochs=1, **SMALL).fit(X, -houses.price)


def test_training_houses_never_reference_themselves(fixture):
    _, houses = fixture
    model = AmmasiModel(AmmasiConfig(**SMALL), houses)
    copy = houses.subset(np.arange(len(houses)))
    assert copy is not houses
    assert np.array_equal(model.predict(copy), model.predict(houses))
    refs = model.references(copy)
    assert not np.any(refs.g_idx == np.arange(len(houses))[:, None])
