"""Command-line pipeline.

Every stage reads its inputs from and writes its outputs to the working
directory (``--out-dir``), so stages compose::

    ammasi synth --out-dir run
    ammasi extract-poi --out-dir run
    ammasi build-areal --out-dir run --location-mode node2vec
    ammasi build-knn --out-dir run
    ammasi train --out-dir run --location-mode node2vec --use-poi
    ammasi evaluate --out-dir run

Exit status is 0 on success, 2 for configuration errors and 3 for data errors.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from contextlib import nullcontext
from pathlib import Path

from .areal import AreaEmbeddingTable, node2vec_table, sinusoidal_pe
from .config import RunConfig, build_config, read_config_file
from .data import (DataError, HouseData, gen_synthetic, load_geojson, load_houses, load_poi_table,
                   train_test_split, write_geojson, write_houses, write_poi_table)
from .geometry import ArealGrid
from .model import (LOCATION_CODES, AmmasiModel, ConfigError, evaluate, sigma_sweep, train,
                    write_history, write_sweep)
from .poi import SingularDesignError, beta_sweep, ols_fit, proximity_matrix

log = logging.getLogger("ammasi")

EXIT_OK, EXIT_CONFIG, EXIT_DATA = 0, 2, 3

FILES = {
    "poi_table": "poi.csv",
    "beta_sweep": "beta_sweep.csv",
    "poi_coefficients": "poi_coefficients.csv",
    "knn_train": "knn_train.csv",
    "knn_test": "knn_test.csv",
    "checkpoint": "model.ckpt",
    "history": "history.csv",
    "metrics": "metrics.csv",
    "sigma_sweep": "sigma_sweep.csv",
}


def areal_file(mode: str) -> str:
    return f"areal_{mode}.txt"


# ---------------------------------------------------------------------------
# shared stage helpers


def _houses(cfg: RunConfig) -> HouseData:
    path = cfg.paths.resolve("houses")
    if not path.exists():
        raise DataError(f"houses file not found: {path}")
    return load_houses(path)


def _split(cfg: RunConfig, houses: HouseData) -> tuple:
    return train_test_split(houses, cfg.test_fraction, cfg.seed)


def _poi_geoms(cfg: RunConfig) -> dict:
    path = cfg.paths.resolve("poi")
    if not path.exists():
        raise DataError(f"POI file not found: {path}")
    return load_geojson(path, "polygon")


def _grid(cfg: RunConfig, train_houses: HouseData) -> ArealGrid:
    g = cfg.grid
    if g.bbox is not None:
        return ArealGrid(g.bbox, g.mx, g.my)
    return ArealGrid.around(train_houses.lonlat, g.mx, g.my, g.pad)


def _attach_poi(cfg: RunConfig, houses: HouseData) -> HouseData:
    """POI proximities from the extract-poi table, or computed from the GeoJSON."""
    table = cfg.paths.output(FILES["poi_table"])
    if table.exists():
        _, prox = load_poi_table(table, houses.ids)
    else:
        geoms = _poi_geoms(cfg)
        prox = proximity_matrix(houses.lonlat, [geoms[k] for k in sorted(geoms)], cfg.beta)
    return houses.with_poi(prox)


def _areal(cfg: RunConfig, mode: str) -> AreaEmbeddingTable | None:
    if mode not in ("sinusoidal", "node2vec"):
        return None
    path = cfg.paths.output(areal_file(mode))
    if not path.exists():
        raise DataError(f"areal table {path} not found; run build-areal --location-mode {mode} first")
    return AreaEmbeddingTable.load(path)


def _needs_poi(cfg: RunConfig) -> bool:
    return cfg.model.use_poi or cfg.model.knn_include_poi


def _fmt(v) -> str:
    return repr(float(v))


# ---------------------------------------------------------------------------
# stages


def cmd_synth(cfg: RunConfig, args) -> None:
    planted = {"poi_signal": args.poi_signal, "areal_signal": args.areal_signal,
               "neighbor_signal": args.neighbor_signal}
    fx = gen_synthetic(cfg.seed, n_houses=args.n_houses, n_poi_types=args.n_poi_types, planted=planted,
                       beta=args.beta_true)
    out = Path(cfg.paths.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_houses(cfg.paths.resolve("houses"), fx.houses)
    write_geojson(cfg.paths.resolve("poi"), fx.poi_geoms)
    write_geojson(cfg.paths.resolve("roads"), fx.roads)
    print(f"wrote {len(fx.houses)} houses, {len(fx.poi_geoms)} POI types, {len(fx.roads)} roads to {out}")


def cmd_extract_poi(cfg: RunConfig, args) -> None:
    houses = _houses(cfg)
    geoms = _poi_geoms(cfg)
    types = sorted(geoms)
    prox = proximity_matrix(houses.lonlat, [geoms[t] for t in types], cfg.beta)
    out = cfg.paths.output(FILES["poi_table"])
    write_poi_table(out, houses.ids, types, prox)
    print(f"wrote {prox.shape[1]} proximity features for {len(houses)} houses (beta={cfg.beta}) to {out}")


def cmd_beta_sweep(cfg: RunConfig, args) -> None:
    houses = _houses(cfg)
    train_h, _ = _split(cfg, houses)
    geoms = _poi_geoms(cfg)
    target = train_h.log_price if args.log_price else train_h.price
    res = beta_sweep(train_h.lonlat, target, [geoms[t] for t in sorted(geoms)], cfg.beta_grid)
    out = cfg.paths.output(FILES["beta_sweep"])
    with open(out, "w") as fh:
        fh.write("beta,r_squared\n")
        for b, r in res.rows():
            fh.write(f"{_fmt(b)},{_fmt(r)}\n")
    print(f"best beta {res.best_beta} (R^2={res.r_squared.max():.4f}); table in {out}")


def cmd_poi_coefficients(cfg: RunConfig, args) -> None:
    houses = _houses(cfg)
    train_h, _ = _split(cfg, houses)
    geoms = _poi_geoms(cfg)
    types = sorted(geoms)
    prox = proximity_matrix(train_h.lonlat, [geoms[t] for t in types], cfg.beta)
    target = train_h.log_price if args.log_price else train_h.price
    try:
        rep = ols_fit(prox, target, names=types)
    except SingularDesignError as exc:
        raise DataError(str(exc)) from None
    out = cfg.paths.output(FILES["poi_coefficients"])
    with open(out, "w") as fh:
        fh.write("name,coefficient,std_error,t_stat,significant\n")
        for i, name in enumerate(rep.names):
            fh.write(f"{name},{_fmt(rep.coefficients[i])},{_fmt(rep.std_errors[i])},"
                     f"{_fmt(rep.t_stats[i])},{int(rep.significant[i])}\n")
    print(f"R^2={rep.r_squared:.4f}; {int(rep.significant[:-1].sum())} of {len(types)} POI types "
          f"significant at |t|>{rep.critical_t}; table in {out}")


def cmd_build_areal(cfg: RunConfig, args) -> None:
    mode = cfg.model.location_mode
    if mode not in ("sinusoidal", "node2vec"):
        raise ConfigError("build-areal needs --location-mode sinusoidal or node2vec")
    train_h, _ = _split(cfg, _houses(cfg))
    grid = _grid(cfg, train_h)
    if mode == "sinusoidal":
        table = sinusoidal_pe(grid, cfg.model.D)
    else:
        path = cfg.paths.resolve("roads")
        if not path.exists():
            raise DataError(f"roads file not found: {path}")
        n = cfg.node2vec
        table = node2vec_table(load_geojson(path, "line"), grid, cfg.model.D, n.num_walks, n.walk_len,
                               n.window, n.negatives, n.epochs, n.lr, cfg.seed)
    out = cfg.paths.output(areal_file(mode))
    table.save(out)
    print(f"wrote {table.m}x{table.dim} {mode} embeddings to {out}")


def cmd_build_knn(cfg: RunConfig, args) -> None:
    houses = _houses(cfg)
    if _needs_poi(cfg):
        houses = _attach_poi(cfg, houses)
    train_h, test_h = _split(cfg, houses)
    model = AmmasiModel(cfg.model.replace(location_mode="none"), train_h)
    model.references(train_h).save_csv(cfg.paths.output(FILES["knn_train"]), train_h.ids)
    model.references(test_h).save_csv(cfg.paths.output(FILES["knn_test"]), test_h.ids)
    print(f"wrote reference lists for {len(train_h)} train and {len(test_h)} test houses")


def cmd_train(cfg: RunConfig, args) -> None:
    houses = _houses(cfg)
    if _needs_poi(cfg):
        houses = _attach_poi(cfg, houses)
    train_h, _ = _split(cfg, houses)
    mode = cfg.model.location_mode
    result = train(train_h, None, cfg.model, _areal(cfg, mode), _grid(cfg, train_h))
    ckpt = cfg.paths.output(FILES["checkpoint"])
    result.model.save(ckpt, {"beta": cfg.beta, "test_fraction": cfg.test_fraction, "seed": cfg.seed})
    write_history(cfg.paths.output(FILES["history"]), result.history)
    last = result.history[-1]
    print(f"trained {len(result.history)} epochs (best {result.best_epoch}, val MALE "
          f"{min(h.val_male for h in result.history):.5f}, final lr {last.lr:g}); checkpoint {ckpt}")


def cmd_evaluate(cfg: RunConfig, args) -> None:
    ckpt = Path(args.checkpoint) if args.checkpoint else cfg.paths.output(FILES["checkpoint"])
    if not ckpt.exists():
        raise DataError(f"checkpoint not found: {ckpt}")
    model = AmmasiModel.load(ckpt)
    houses = _houses(cfg)
    if model.cfg.use_poi or model.cfg.knn_include_poi:
        houses = _attach_poi(cfg, houses)
    train_h, test_h = _split(cfg, houses)
    rows = [("train", len(train_h), evaluate(model, train_h)), ("test", len(test_h), evaluate(model, test_h))]
    out = cfg.paths.output(FILES["metrics"])
    with open(out, "w") as fh:
        fh.write("split,n,male,rmse,mdape\n")
        for name, n, m in rows:
            fh.write(f"{name},{n},{_fmt(m.male)},{_fmt(m.rmse)},{_fmt(m.mdape)}\n")
    for name, _, m in rows:
        print(f"{name}: MALE {m.male:.4f}  RMSE {m.rmse:.1f}  MdAPE {m.mdape:.2f}%")


def cmd_sigma_sweep(cfg: RunConfig, args) -> None:
    houses = _houses(cfg)
    cells = [tuple(c.strip().split(",")) for c in args.cells.split(";")] if args.cells else None
    want_poi = cells is None or any(p == "P" for _, p in cells) or cfg.model.knn_include_poi
    if want_poi and (cfg.paths.output(FILES["poi_table"]).exists() or cfg.paths.resolve("poi").exists()):
        houses = _attach_poi(cfg, houses)
    elif cells is None:
        cells = [(loc, "-") for loc in LOCATION_CODES]
    train_h, test_h = _split(cfg, houses)
    tables = {}
    for mode in ("sinusoidal", "node2vec"):
        if cfg.paths.output(areal_file(mode)).exists():
            tables[mode] = AreaEmbeddingTable.load(cfg.paths.output(areal_file(mode)))
    if cells is None:
        cells = [(loc, p) for loc, mode in LOCATION_CODES.items()
                 if mode in ("none", "latlon") or mode in tables for p in ("-", "P")]
    rows = sigma_sweep(train_h, test_h, cfg.model, cfg.sigma_grid, cells, tables, _grid(cfg, train_h))
    out = cfg.paths.output(FILES["sigma_sweep"])
    write_sweep(out, rows)
    for r in rows:
        print(f"sigma_G={r.sigma_g} sigma_S={r.sigma_s} {r.cell}: MALE {r.metrics.male:.4f}")


COMMANDS = {
    "synth": (cmd_synth, "write a seeded synthetic region (houses, POIs, roads)"),
    "extract-poi": (cmd_extract_poi, "compute per-house POI proximity features"),
    "beta-sweep": (cmd_beta_sweep, "R^2 of prices on POI proximity for each beta"),
    "poi-coefficients": (cmd_poi_coefficients, "OLS coefficients and t-statistics of POI proximity"),
    "build-areal": (cmd_build_areal, "build the sinusoidal or Node2Vec areal embedding table"),
    "build-knn": (cmd_build_knn, "write geographic and feature-space reference lists"),
    "train": (cmd_train, "train the network and write a checkpoint and history"),
    "evaluate": (cmd_evaluate, "score a checkpoint on the train and test splits"),
    "sigma-sweep": (cmd_sigma_sweep, "train one model per sigma pair and ablation cell"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML or JSON run configuration")
    common.add_argument("--out-dir", help="working directory for stage inputs and outputs")
    common.add_argument("--houses", help="houses CSV (id,lon,lat,price,attr_1..)")
    common.add_argument("--poi", help="POI GeoJSON with a poi_type property per feature")
    common.add_argument("--roads", help="road GeoJSON (LineString / MultiLineString)")
    common.add_argument("--seed", type=int)
    common.add_argument("--region", choices=["fc", "kc", "sp", "poa", "custom"])
    common.add_argument("--beta", type=float, help="POI proximity scale in degrees")
    common.add_argument("--location-mode", choices=["none", "latlon", "sinusoidal", "node2vec"])
    common.add_argument("--use-poi", action="store_true", default=None)
    common.add_argument("--knn-include-poi", action="store_true", default=None)
    common.add_argument("--mask-direction", choices=["below", "above"])
    common.add_argument("--sigma-g", type=float)
    common.add_argument("--sigma-s", type=float)
    common.add_argument("--max-epochs", type=int)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="ammasi", description="Attention-based house price pipeline.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, parents=[common], help=help_text, description=help_text)
        if name == "synth":
            p.add_argument("--n-houses", type=int, default=500)
            p.add_argument("--n-poi-types", type=int, default=15)
            p.add_argument("--poi-signal", type=float, default=1.0)
            p.add_argument("--areal-signal", type=float, default=1.0)
            p.add_argument("--neighbor-signal", type=float, default=0.5)
            p.add_argument("--beta-true", type=float, default=0.03)
        if name in ("beta-sweep", "poi-coefficients"):
            p.add_argument("--log-price", action="store_true", help="regress log prices instead of prices")
        if name == "evaluate":
            p.add_argument("--checkpoint")
        if name == "sigma-sweep":
            p.add_argument("--cells", metavar="LOC,POI;...",
                           help="ablation cells, e.g. --cells='-,-;A,P'; default all available")
    return parser


def resolve_config(args) -> RunConfig:
    tree = read_config_file(args.config) if args.config else {}
    if args.region:
        tree["region"] = args.region
    cfg = build_config(tree)
    for flag, attr in (("out_dir", "out_dir"), ("houses", "houses"), ("poi", "poi"), ("roads", "roads")):
        if getattr(args, flag):
            setattr(cfg.paths, attr, getattr(args, flag))
    if args.seed is not None:
        cfg.seed = args.seed
    if args.beta is not None:
        cfg.beta = args.beta
    overrides = {"seed": cfg.seed}
    for flag, field_name in (("location_mode", "location_mode"), ("use_poi", "use_poi"),
                             ("knn_include_poi", "knn_include_poi"), ("mask_direction", "mask_direction"),
                             ("sigma_g", "sigma_g"), ("sigma_s", "sigma_s"), ("max_epochs", "max_epochs")):
        if getattr(args, flag) is not None:
            overrides[field_name] = getattr(args, flag)
    cfg.model = cfg.model.replace(**overrides)
    return cfg.validate()


def _thread_limit():
    raw = os.environ.get("AMMASI_THREADS")
    if not raw:
        return nullcontext()
    try:
        n = int(raw)
        if n < 1:
            raise ValueError
    except ValueError:
        raise ConfigError(f"AMMASI_THREADS must be a positive integer, got {raw!r}") from None
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        Path(cfg.paths.out_dir).mkdir(parents=True, exist_ok=True)
        with _thread_limit():
            COMMANDS[args.command][0](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FileNotFoundError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
