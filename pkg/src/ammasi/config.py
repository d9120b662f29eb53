"""Run configuration: region presets, file layout and config-file loading.

Values are resolved in order: built-in defaults, the region profile, the
config file, then command-line overrides.
"""

from __future__ import annotations

import dataclasses
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

from .model import AmmasiConfig, ConfigError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


@dataclass(frozen=True)
class RegionProfile:
    """Proximity scale and mask thresholds tuned for one study region."""

    name: str
    beta: float
    sigma_s: float
    sigma_g: float = 0.01


REGIONS = {
    "fc": RegionProfile("fc", beta=0.045, sigma_s=0.02),
    "kc": RegionProfile("kc", beta=0.035, sigma_s=0.05),
    "sp": RegionProfile("sp", beta=0.020, sigma_s=0.05),
    "poa": RegionProfile("poa", beta=0.025, sigma_s=0.02),
}

BETA_GRID = tuple(round(0.005 * k, 3) for k in range(1, 21))
SIGMA_VALUES = (0.01, 0.02, 0.03, 0.05, 0.1, 0.2, 0.3, 0.5)


@dataclass
class Paths:
    houses: str = "houses.csv"
    poi: str = "poi.geojson"
    roads: str = "roads.geojson"
    out_dir: str = "."

    def resolve(self, name: str) -> Path:
        """Input paths are taken relative to ``out_dir`` unless absolute."""
        p = Path(getattr(self, name))
        return p if p.is_absolute() else Path(self.out_dir) / p

    def output(self, filename: str) -> Path:
        return Path(self.out_dir) / filename


@dataclass
class GridConfig:
    mx: int = 100
    my: int = 100
    pad: float = 0.01
    bbox: tuple | None = None


@dataclass
class Node2VecConfig:
    num_walks: int = 10
    walk_len: int = 40
    window: int = 7
    negatives: int = 5
    epochs: int = 5
    lr: float = 0.025


@dataclass
class RunConfig:
    paths: Paths = field(default_factory=Paths)
    region: str = "fc"
    beta: float = REGIONS["fc"].beta
    beta_grid: tuple = BETA_GRID
    model: AmmasiConfig = field(default_factory=lambda: AmmasiConfig(
        sigma_g=REGIONS["fc"].sigma_g, sigma_s=REGIONS["fc"].sigma_s))
    grid: GridConfig = field(default_factory=GridConfig)
    node2vec: Node2VecConfig = field(default_factory=Node2VecConfig)
    sigma_grid: tuple = tuple((g, REGIONS["fc"].sigma_s) for g in SIGMA_VALUES)
    test_fraction: float = 0.2
    seed: int = 0

    def validate(self) -> "RunConfig":
        if not self.beta > 0:
            raise ConfigError(f"beta must be positive, got {self.beta}")
        if not self.beta_grid or any(not b > 0 for b in self.beta_grid):
            raise ConfigError("beta_grid must be non-empty and positive")
        if not 0 < self.test_fraction < 1:
            raise ConfigError("test_fraction must be in (0, 1)")
        if self.grid.mx < 1 or self.grid.my < 1:
            raise ConfigError("grid size must be positive")
        if not self.sigma_grid:
            raise ConfigError("sigma_grid must be non-empty")
        return self


def apply_region(cfg: RunConfig, region: str) -> RunConfig:
    """Set ``beta``, ``sigma_g``, ``sigma_s`` and the sweep grid from a preset."""
    if region == "custom":
        cfg.region = region
        return cfg
    if region not in REGIONS:
        raise ConfigError(f"unknown region {region!r}; choose from {sorted(REGIONS)} or custom")
    prof = REGIONS[region]
    cfg.region = region
    cfg.beta = prof.beta
    cfg.model = cfg.model.replace(sigma_g=prof.sigma_g, sigma_s=prof.sigma_s)
    cfg.sigma_grid = tuple((g, prof.sigma_s) for g in SIGMA_VALUES)
    return cfg


def read_config_file(path) -> dict:
    path = Path(path)
    try:
        text = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        if path.suffix == ".json":
            return json.loads(text)
        return tomllib.loads(text.decode())
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from None


def _update_dataclass(obj, values: Mapping, section: str):
    known = {f.name for f in dataclasses.fields(obj)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown option(s) in [{section}]: {sorted(unknown)}")
    return dataclasses.replace(obj, **values)


def build_config(tree: Mapping | None = None) -> RunConfig:
    """Merge a parsed config tree over the defaults.

    Top-level keys: ``seed``, ``region``, ``beta``, ``beta_grid``,
    ``test_fraction``, ``sigma_grid`` and the tables ``paths``, ``model``,
    ``grid``, ``node2vec``. A region applies before the other keys so
    explicit values win over the preset.
    """
    tree = dict(tree or {})
    cfg = RunConfig()
    if "region" in tree:
        apply_region(cfg, tree.pop("region"))
    sections = {"paths": "paths", "grid": "grid", "node2vec": "node2vec"}
    for key, attr in sections.items():
        if key in tree:
            setattr(cfg, attr, _update_dataclass(getattr(cfg, attr), tree.pop(key), key))
    if "model" in tree:
        try:
            cfg.model = _update_dataclass(cfg.model, tree.pop("model"), "model")
        except TypeError as exc:
            raise ConfigError(str(exc)) from None
    if cfg.grid.bbox is not None:
        cfg.grid.bbox = tuple(float(v) for v in cfg.grid.bbox)
    for key in ("seed", "beta", "test_fraction"):
        if key in tree:
            setattr(cfg, key, tree.pop(key))
    if "beta_grid" in tree:
        cfg.beta_grid = tuple(float(b) for b in tree.pop("beta_grid"))
    if "sigma_grid" in tree:
        try:
            cfg.sigma_grid = tuple((_sigma(g), _sigma(s)) for g, s in tree.pop("sigma_grid"))
        except (TypeError, ValueError):
            raise ConfigError("sigma_grid entries must be [sigma_g, sigma_s] pairs") from None
    if tree:
        raise ConfigError(f"unknown config key(s) {sorted(tree)}")
    return cfg.validate()


def _sigma(v):
    return None if v is None or v == "none" else float(v)


def load_config(path=None) -> RunConfig:
    return build_config(read_config_file(path) if path else {})
