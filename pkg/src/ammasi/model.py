"""The attention-based house price network, its training loop and sweeps.

A target house is embedded by a two-stack FC block. Two masked multi-head
attention branches read its geographic and feature-space reference houses
(attributes plus log price, the ``f*`` rows). An optional areal embedding
of the house's grid cell is appended, and a final FC block maps the
``4 D`` concatenation to a log price.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .areal import AreaEmbeddingTable
from .checkpoint import load_checkpoint, save_checkpoint
from .data import HouseData
from .geometry import ArealGrid
from .knn import ReferenceIndex, ReferenceSet
from .metrics import MetricTriple, price_metrics
from .nn import (MASK_DIRECTIONS, AdamState, adam_step, attention_backward, attention_forward,
                 distance_mask, fc2_backward, fc2_forward, init_fc2, init_mha)

log = logging.getLogger(__name__)

LOCATION_MODES = ("none", "latlon", "sinusoidal", "node2vec")
_MODE_ALIASES = {"latlon_concat": "latlon"}

# ablation codes: location slot and POI concat
LOCATION_CODES = {"-": "none", "L": "latlon", "S": "sinusoidal", "A": "node2vec"}
POI_CODES = {"-": False, "P": True}

# named sub-streams of the run seed
STREAM_INIT = 1
STREAM_SHUFFLE = 2
STREAM_SPLIT = 3


class ConfigError(ValueError):
    """Invalid model or run configuration."""


def substream(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), stream])


@dataclass
class AmmasiConfig:
    """Network shape, masking and training protocol.

    ``sigma_g`` / ``sigma_s`` are the geographic (degrees) and feature-space
    (z-units) mask thresholds; ``None`` disables that mask.
    """

    D: int = 64
    d: int = 8
    K: int = 8
    sigma_g: float | None = 0.01
    sigma_s: float | None = 0.02
    mask_direction: str = "below"
    location_mode: str = "none"
    use_poi: bool = False
    knn_include_poi: bool = False
    n_g: int = 20
    n_s: int = 20
    batch_size: int = 250
    lr0: float = 0.008
    early_stop_patience: int = 10
    lr_reduce_patience: int = 5
    lr_reduce_factor: float = 0.1
    max_epochs: int = 500
    val_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        self.location_mode = _MODE_ALIASES.get(self.location_mode, self.location_mode)
        if self.location_mode not in LOCATION_MODES:
            raise ConfigError(f"location_mode must be one of {LOCATION_MODES}, got {self.location_mode!r}")
        if self.mask_direction not in MASK_DIRECTIONS:
            raise ConfigError(f"mask_direction must be one of {MASK_DIRECTIONS}, got {self.mask_direction!r}")
        if self.K * self.d != self.D:
            raise ConfigError(f"K*d must equal D (K={self.K}, d={self.d}, D={self.D})")
        for name in ("sigma_g", "sigma_s"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ConfigError(f"{name} must be positive or None, got {v}")
        for name in ("n_g", "n_s", "batch_size", "early_stop_patience", "lr_reduce_patience", "max_epochs"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be at least 1")
        if self.lr0 < 0:
            raise ConfigError("lr0 must be non-negative")
        if not 0 <= self.val_fraction < 1:
            raise ConfigError("val_fraction must be in [0, 1)")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, values: Mapping) -> "AmmasiConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"unknown model option(s) {sorted(unknown)}")
        return cls(**values)

    def replace(self, **changes) -> "AmmasiConfig":
        return dataclasses.replace(self, **changes)


# ---------------------------------------------------------------------------
# network


def init_params(cfg: AmmasiConfig, n_query: int, n_ref: int, rng: np.random.Generator,
                out_bias: float = 0.0) -> dict:
    """Glorot weights, zero biases; the output bias starts at ``out_bias``."""
    params = {
        "house": init_fc2(rng, n_query, cfg.D, cfg.D),
        "geo": init_mha(rng, n_query, n_ref, cfg.K, cfg.d),
        "sim": init_mha(rng, n_query, n_ref, cfg.K, cfg.d),
        "head": init_fc2(rng, 4 * cfg.D, cfg.D, 1),
    }
    params["head"]["b2"][:] = out_bias
    return params


def _mask(dists: np.ndarray, sigma: float | None, direction: str) -> np.ndarray:
    if sigma is None:
        return np.zeros(dists.shape, dtype=bool)
    return distance_mask(dists, sigma, direction)


def forward(params: Mapping, cfg: AmmasiConfig, query: np.ndarray, ref_g: np.ndarray, dist_g: np.ndarray,
            ref_s: np.ndarray, dist_s: np.ndarray, areal: np.ndarray) -> tuple:
    """Predicted log prices for a batch; returns ``(pred (B,), cache)``.

    ``query (B, Fq)`` are target features, ``ref_g``/``ref_s (B, N, Fr)``
    the f* rows of the references with distances ``dist_g``/``dist_s
    (B, N)``, and ``areal (B, D)`` the areal slot (zeros when unused).
    """
    query = np.asarray(query, dtype=float)
    if query.ndim != 2 or ref_g.ndim != 3 or ref_s.ndim != 3:
        raise ValueError("expected query (B, F), references (B, N, F)")
    if areal.shape != (len(query), cfg.D):
        raise ValueError(f"areal slot must be ({len(query)}, {cfg.D}), got {areal.shape}")
    if ref_g.shape[1] == 0 or ref_s.shape[1] == 0:
        raise ValueError("no reference houses")
    emb, c_house = fc2_forward(query, params["house"])
    out_g, c_geo = attention_forward(query, ref_g, _mask(dist_g, cfg.sigma_g, cfg.mask_direction), params["geo"])
    out_s, c_sim = attention_forward(query, ref_s, _mask(dist_s, cfg.sigma_s, cfg.mask_direction), params["sim"])
    z = np.concatenate([emb, out_g, out_s, areal], axis=1)
    out, c_head = fc2_forward(z, params["head"])
    cache = {"house": c_house, "geo": c_geo, "sim": c_sim, "head": c_head, "D": cfg.D}
    return out[:, 0], cache


def backward(dpred: np.ndarray, cache: dict, params: Mapping) -> dict:
    """Parameter gradients for :func:`forward` given ``d loss / d pred``."""
    D = cache["D"]
    dz, g_head = fc2_backward(np.asarray(dpred, dtype=float)[:, None], cache["head"], params["head"])
    _, g_house = fc2_backward(dz[:, :D], cache["house"], params["house"])
    _, _, g_geo = attention_backward(dz[:, D:2 * D], cache["geo"], params["geo"])
    _, _, g_sim = attention_backward(dz[:, 2 * D:3 * D], cache["sim"], params["sim"])
    return {"house": g_house, "geo": g_geo, "sim": g_sim, "head": g_head}


def loss_male(pred_log, y) -> float:
    """Mean absolute difference between ``log y`` and the predicted log price."""
    return loss_male_grad(pred_log, y)[0]


def loss_male_grad(pred_log, y) -> tuple:
    """Loss and its subgradient in ``pred_log`` (0 where the residual is 0)."""
    pred_log = np.asarray(pred_log, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if pred_log.shape != y.shape:
        raise ValueError(f"{pred_log.size} predictions for {y.size} prices")
    if y.size == 0:
        raise ValueError("empty input")
    if np.any(y <= 0):
        raise ValueError("prices must be positive")
    r = pred_log - np.log(y)
    return float(np.mean(np.abs(r))), np.sign(r) / r.size


# ---------------------------------------------------------------------------
# data preparation


@dataclass
class Normalizer:
    """Training-split z-score statistics for every model input."""

    attr_mean: np.ndarray
    attr_std: np.ndarray
    poi_mean: np.ndarray
    poi_std: np.ndarray
    loc_mean: np.ndarray
    loc_std: np.ndarray
    logp_mean: float
    logp_std: float

    @staticmethod
    def _stats(X) -> tuple:
        X = np.asarray(X, dtype=float)
        sd = X.std(axis=0)
        return X.mean(axis=0), np.where(sd > 0, sd, 1.0)

    @classmethod
    def fit(cls, data: HouseData) -> "Normalizer":
        am, asd = cls._stats(data.attrs)
        pm, psd = cls._stats(data.poi) if data.poi is not None else (np.zeros(0), np.ones(0))
        lm, lsd = cls._stats(data.lonlat)
        logp = data.log_price
        sd = float(logp.std())
        return cls(am, asd, pm, psd, lm, lsd, float(logp.mean()), sd if sd > 0 else 1.0)


@dataclass
class Batchable:
    """Everything :func:`forward` needs for a set of target houses."""

    query: np.ndarray
    refs: ReferenceSet
    areal: np.ndarray
    price: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.query)


@dataclass
class HistoryRow:
    epoch: int
    lr: float
    train_male: float
    val_male: float


class AmmasiModel:
    """A trained (or freshly initialised) network bound to its training split.

    The training houses serve as the reference pool for every prediction,
    so they are part of the model and of its checkpoint.
    """

    def __init__(self, cfg: AmmasiConfig, train: HouseData, areal: AreaEmbeddingTable | None = None,
                 grid: ArealGrid | None = None, params: dict | None = None):
        if len(train) == 0:
            raise ValueError("empty training split")
        if max(cfg.n_g, cfg.n_s) > len(train) - 1:
            raise ValueError(f"need more than {max(cfg.n_g, cfg.n_s)} training houses, got {len(train)}")
        if cfg.use_poi or cfg.knn_include_poi:
            if train.poi is None:
                raise ValueError("POI features requested but the houses carry none")
        self.cfg = cfg
        self.train_data = train
        self.norm = Normalizer.fit(train)
        if cfg.location_mode in ("sinusoidal", "node2vec"):
            if areal is None:
                raise ConfigError(f"location_mode {cfg.location_mode!r} needs an areal embedding table")
            if areal.dim != cfg.D:
                raise ConfigError(f"areal embedding width {areal.dim} != D={cfg.D}")
            grid = grid or ArealGrid.around(train.lonlat)
            if areal.m != grid.n_cells:
                raise ConfigError(f"areal table has {areal.m} rows but the grid has {grid.n_cells} cells")
        self.areal = areal
        self.grid = grid
        self.index = ReferenceIndex(train.lonlat, self._knn_feats(train), cfg.n_g, cfg.n_s)
        self.bank = self._fstar(train)
        self.params = params if params is not None else init_params(
            cfg, self.n_query, self.bank.shape[1], substream(cfg.seed, STREAM_INIT),
            out_bias=self.norm.logp_mean,
        )
        self._train_refs = None

    # feature construction -------------------------------------------------

    def _attr_block(self, data: HouseData) -> list:
        blocks = [(data.attrs - self.norm.attr_mean) / self.norm.attr_std]
        if self.cfg.use_poi:
            if data.poi is None or data.poi.shape[1] != len(self.norm.poi_mean):
                raise ValueError("houses lack the POI columns the model was trained with")
            blocks.append((data.poi - self.norm.poi_mean) / self.norm.poi_std)
        return blocks

    def _knn_feats(self, data: HouseData) -> np.ndarray:
        if self.cfg.knn_include_poi:
            return np.hstack([data.attrs, data.poi])
        return data.attrs

    def _fstar(self, data: HouseData) -> np.ndarray:
        z = (data.log_price - self.norm.logp_mean) / self.norm.logp_std
        return np.hstack(self._attr_block(data) + [z[:, None]])

    def query_features(self, data: HouseData) -> np.ndarray:
        blocks = self._attr_block(data)
        if self.cfg.location_mode == "latlon":
            blocks.append((data.lonlat - self.norm.loc_mean) / self.norm.loc_std)
        return np.hstack(blocks)

    @property
    def n_query(self) -> int:
        return self.train_data.attrs.shape[1] + (len(self.norm.poi_mean) if self.cfg.use_poi else 0) + (
            2 if self.cfg.location_mode == "latlon" else 0)

    def areal_slot(self, data: HouseData) -> np.ndarray:
        if self.cfg.location_mode in ("sinusoidal", "node2vec"):
            return self.areal.lookup(self.grid.assign(data.lonlat))
        return np.zeros((len(data), self.cfg.D))

    def references(self, data: HouseData) -> ReferenceSet:
        """Reference lists in the training split.

        A house whose id is in the training split never references itself,
        so scoring training houses does not leak their own prices.
        """
        if data is self.train_data:
            if self._train_refs is None:
                self._train_refs = self.index.query_train()
            return self._train_refs
        pos = {hid: i for i, hid in enumerate(self.train_data.ids)}
        exclude = np.array([pos.get(hid, -1) for hid in data.ids], dtype=np.int64)
        return self.index.query(data.lonlat, self._knn_feats(data), exclude=exclude)

    def prepare(self, data: HouseData, refs: ReferenceSet | None = None) -> Batchable:
        if len(data) == 0:
            raise ValueError("no houses to prepare")
        if data.attrs.shape[1] != self.train_data.attrs.shape[1]:
            raise ValueError(f"expected {self.train_data.attrs.shape[1]} attributes, got {data.attrs.shape[1]}")
        refs = refs if refs is not None else self.references(data)
        return Batchable(self.query_features(data), refs, self.areal_slot(data), data.price)

    # evaluation -----------------------------------------------------------

    def forward_rows(self, b: Batchable, rows: np.ndarray, params: Mapping | None = None) -> tuple:
        r = b.refs
        return forward(
            params if params is not None else self.params, self.cfg, b.query[rows],
            self.bank[r.g_idx[rows]], r.g_dist[rows], self.bank[r.s_idx[rows]], r.s_dist[rows], b.areal[rows],
        )

    def predict_log(self, data: HouseData | Batchable, chunk: int = 1024) -> np.ndarray:
        b = data if isinstance(data, Batchable) else self.prepare(data)
        out = np.empty(len(b))
        for start in range(0, len(b), chunk):
            rows = np.arange(start, min(start + chunk, len(b)))
            out[rows] = self.forward_rows(b, rows)[0]
        return out

    def predict(self, data: HouseData) -> np.ndarray:
        return np.exp(self.predict_log(data))

    # persistence -----------------------------------------------------------

    def save(self, path, extra_meta: Mapping | None = None) -> None:
        from .nn import flatten_params
        t = self.train_data
        tensors = {f"param.{k}": v for k, v in flatten_params(self.params).items()}
        tensors.update({"train.lonlat": t.lonlat, "train.attrs": t.attrs, "train.price": t.price})
        if t.poi is not None:
            tensors["train.poi"] = t.poi
        if self.areal is not None:
            tensors["areal"] = self.areal.vectors
        meta = {
            "config": self.cfg.to_dict(),
            "train_ids": list(t.ids),
            "attr_names": list(t.attr_names),
            "areal_source": self.areal.source if self.areal is not None else None,
            "grid": None if self.grid is None else {"bbox": list(self.grid.bbox), "mx": self.grid.mx,
                                                    "my": self.grid.my},
            "extra": dict(extra_meta or {}),
        }
        save_checkpoint(path, meta, tensors)

    @classmethod
    def load(cls, path) -> "AmmasiModel":
        meta, tensors = load_checkpoint(path)
        cfg = AmmasiConfig.from_dict(meta["config"])
        train = HouseData(meta["train_ids"], tensors["train.lonlat"], tensors["train.attrs"],
                          tensors["train.price"], tensors.get("train.poi"), tuple(meta["attr_names"]))
        grid = None
        if meta["grid"] is not None:
            g = meta["grid"]
            grid = ArealGrid(tuple(g["bbox"]), g["mx"], g["my"])
        areal = AreaEmbeddingTable(tensors["areal"], meta["areal_source"]) if "areal" in tensors else None
        params: dict = {}
        for name, arr in tensors.items():
            if name.startswith("param."):
                node = params
                *path_parts, leaf = name[len("param."):].split(".")
                for part in path_parts:
                    node = node.setdefault(part, {})
                node[leaf] = arr
        return cls(cfg, train, areal, grid, params)


# ---------------------------------------------------------------------------
# training


class PlateauSchedule:
    """Validation-driven learning-rate decay and early stopping.

    After each epoch call :meth:`update` with the validation loss. Each run of
    ``reduce_patience`` epochs without a strict improvement multiplies the
    learning rate by ``factor``; ``stop_patience`` such epochs end training.
    """

    def __init__(self, lr0: float, reduce_patience: int = 5, factor: float = 0.1, stop_patience: int = 10):
        self.lr = lr0
        self.reduce_patience = reduce_patience
        self.factor = factor
        self.stop_patience = stop_patience
        self.best = math.inf
        self.best_epoch = 0
        self.wait = 0
        self.stop = False

    def update(self, epoch: int, val_loss: float) -> bool:
        """Record an epoch's loss; returns True on a new best."""
        if val_loss < self.best:
            self.best, self.best_epoch, self.wait = val_loss, epoch, 0
            return True
        self.wait += 1
        if self.wait >= self.stop_patience:
            self.stop = True
        elif self.wait % self.reduce_patience == 0:
            self.lr *= self.factor
        return False


@dataclass
class TrainResult:
    model: AmmasiModel
    history: list = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False

    def history_rows(self) -> list:
        return [dataclasses.astuple(h) for h in self.history]


def _copy_params(params: Mapping) -> dict:
    return {k: _copy_params(v) if isinstance(v, Mapping) else v.copy() for k, v in params.items()}


def split_validation(data: HouseData, fraction: float, seed: int) -> tuple:
    """Seeded hold-out; ``fraction == 0`` returns the data as both splits."""
    if fraction == 0:
        return data, data
    order = substream(seed, STREAM_SPLIT).permutation(len(data))
    n_val = max(1, int(round(fraction * len(data))))
    return data.subset(np.sort(order[n_val:])), data.subset(np.sort(order[:n_val]))


def train(train_data: HouseData, val_data: HouseData | None, cfg: AmmasiConfig,
          areal: AreaEmbeddingTable | None = None, grid: ArealGrid | None = None,
          callback: Callable | None = None) -> TrainResult:
    """Mini-batch Adam on the log-price MALE with plateau decay and early stopping.

    ``val_data=None`` holds out ``cfg.val_fraction`` of ``train_data``;
    passing the training split itself validates on it. References always
    come from the training split. ``callback(row)`` runs after each epoch.
    Returns the parameters of the best validation epoch.
    """
    if val_data is None:
        train_data, val_data = split_validation(train_data, cfg.val_fraction, cfg.seed)
    if len(train_data) == 0 or len(val_data) == 0:
        raise ValueError("train and validation splits must be non-empty")
    model = AmmasiModel(cfg, train_data, areal, grid)
    tr = model.prepare(train_data)
    va = tr if val_data is train_data else model.prepare(val_data)

    sched = PlateauSchedule(cfg.lr0, cfg.lr_reduce_patience, cfg.lr_reduce_factor, cfg.early_stop_patience)
    shuffle = substream(cfg.seed, STREAM_SHUFFLE)
    opt = AdamState()
    best = _copy_params(model.params)
    history = []
    n = len(tr)
    for epoch in range(1, cfg.max_epochs + 1):
        lr = sched.lr
        order = shuffle.permutation(n)
        for start in range(0, n, cfg.batch_size):
            rows = order[start:start + cfg.batch_size]
            pred, cache = model.forward_rows(tr, rows)
            _, dpred = loss_male_grad(pred, tr.price[rows])
            if lr > 0:
                adam_step(model.params, backward(dpred, cache, model.params), opt, lr)
        train_male = loss_male(model.predict_log(tr), tr.price)
        val_male = train_male if va is tr else loss_male(model.predict_log(va), va.price)
        row = HistoryRow(epoch, lr, train_male, val_male)
        history.append(row)
        if callback is not None:
            callback(row)
        if sched.update(epoch, val_male):
            best = _copy_params(model.params)
        if sched.stop:
            break
    log.info("training stopped after %d epochs; best val MALE %.5f at epoch %d",
             len(history), sched.best, sched.best_epoch)
    model.params = best
    return TrainResult(model, history, sched.best_epoch, sched.stop)


def evaluate(model: AmmasiModel, data: HouseData) -> MetricTriple:
    """MALE, RMSE and MdAPE of ``exp(predicted log price)``."""
    return price_metrics(data.price, model.predict(data))


def write_history(path, history: Sequence[HistoryRow]) -> None:
    with open(path, "w") as fh:
        fh.write("epoch,lr,train_male,val_male\n")
        for h in history:
            fh.write(f"{h.epoch},{h.lr!r},{h.train_male!r},{h.val_male!r}\n")


# ---------------------------------------------------------------------------
# sweeps


@dataclass
class SweepRow:
    sigma_g: float | None
    sigma_s: float | None
    location: str
    poi: str
    metrics: MetricTriple

    @property
    def cell(self) -> str:
        return f"({self.location},{self.poi})"


ALL_CELLS = tuple((loc, poi) for loc in LOCATION_CODES for poi in POI_CODES)


def sigma_sweep(train_data: HouseData, val_data: HouseData, cfg: AmmasiConfig, sigma_grid: Sequence,
                cells: Sequence | None = None, areal_tables: Mapping | None = None,
                grid: ArealGrid | None = None) -> list:
    """Train and score one model per (sigma_g, sigma_s) point and ablation cell.

    ``cells`` are ``(location, poi)`` code pairs from ``{-, L, S, A} x {-, P}``;
    by default every cell whose areal table is available. ``areal_tables``
    maps ``"sinusoidal"``/``"node2vec"`` to tables on ``grid``.
    """
    sigma_grid = list(sigma_grid)
    if not sigma_grid:
        raise ValueError("empty sigma grid")
    areal_tables = dict(areal_tables or {})
    if cells is None:
        cells = [c for c in ALL_CELLS if LOCATION_CODES[c[0]] in ("none", "latlon") or
                 LOCATION_CODES[c[0]] in areal_tables]
    rows = []
    for sg, ss in sigma_grid:
        for loc, poi in cells:
            if loc not in LOCATION_CODES or poi not in POI_CODES:
                raise ConfigError(f"unknown ablation cell ({loc},{poi})")
            mode = LOCATION_CODES[loc]
            cell_cfg = cfg.replace(sigma_g=sg, sigma_s=ss, location_mode=mode, use_poi=POI_CODES[poi])
            res = train(train_data, val_data, cell_cfg, areal_tables.get(mode), grid)
            metrics = evaluate(res.model, val_data)
            log.info("sigma=(%s, %s) cell (%s,%s): MALE %.4f", sg, ss, loc, poi, metrics.male)
            rows.append(SweepRow(sg, ss, loc, poi, metrics))
    return rows


def write_sweep(path, rows: Sequence[SweepRow]) -> None:
    with open(path, "w") as fh:
        fh.write("sigma_g,sigma_s,location,poi,male,rmse,mdape\n")
        for r in rows:
            m = r.metrics
            fh.write(f"{r.sigma_g!r},{r.sigma_s!r},{r.location},{r.poi},{m.male!r},{m.rmse!r},{m.mdape!r}\n")


# ---------------------------------------------------------------------------
# estimator facade


class AmmasiRegressor(RegressorMixin, BaseEstimator):
    """Scikit-learn style wrapper around :func:`train`.

    ``X`` columns are ``lon, lat``, then house attributes, then the last
    ``n_poi`` columns as POI proximities. ``y`` holds positive prices and
    :meth:`predict` returns prices.

    Parameters
    ----------
    n_poi : int
        Number of trailing POI columns in ``X``.
    areal, grid : AreaEmbeddingTable, ArealGrid, optional
        Required for the ``sinusoidal`` and ``node2vec`` location modes.
    **others
        Same meaning as the :class:`AmmasiConfig` fields.
    """

    def __init__(self, D=64, d=8, K=8, sigma_g=0.01, sigma_s=0.02, mask_direction="below",
                 location_mode="none", use_poi=False, knn_include_poi=False, n_g=20, n_s=20,
                 batch_size=250, lr0=0.008, early_stop_patience=10, lr_reduce_patience=5,
                 lr_reduce_factor=0.1, max_epochs=500, val_fraction=0.1, seed=0, n_poi=0,
                 areal=None, grid=None):
        self.D = D
        self.d = d
        self.K = K
        self.sigma_g = sigma_g
        self.sigma_s = sigma_s
        self.mask_direction = mask_direction
        self.location_mode = location_mode
        self.use_poi = use_poi
        self.knn_include_poi = knn_include_poi
        self.n_g = n_g
        self.n_s = n_s
        self.batch_size = batch_size
        self.lr0 = lr0
        self.early_stop_patience = early_stop_patience
        self.lr_reduce_patience = lr_reduce_patience
        self.lr_reduce_factor = lr_reduce_factor
        self.max_epochs = max_epochs
        self.val_fraction = val_fraction
        self.seed = seed
        self.n_poi = n_poi
        self.areal = areal
        self.grid = grid

    def _config(self) -> AmmasiConfig:
        names = {f.name for f in dataclasses.fields(AmmasiConfig)}
        return AmmasiConfig(**{k: v for k, v in self.get_params(deep=False).items() if k in names})

    def _houses(self, X, y=None) -> HouseData:
        n_attr = X.shape[1] - 2 - self.n_poi
        if n_attr < 1:
            raise ValueError(f"X needs lon, lat, at least one attribute and {self.n_poi} POI columns")
        poi = X[:, 2 + n_attr:] if self.n_poi else None
        price = np.ones(len(X)) if y is None else y
        return HouseData([str(i) for i in range(len(X))], X[:, :2], X[:, 2:2 + n_attr], price, poi)

    def fit(self, X, y):
        X, y = check_X_y(X, y, y_numeric=True)
        if np.any(y <= 0):
            raise ValueError("prices must be positive")
        cfg = self._config()
        result = train(self._houses(X, y), None, cfg, self.areal, self.grid)
        self.model_ = result.model
        self.history_ = result.history
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} columns, expected {self.n_features_in_}")
        return self.model_.predict(self._houses(X))
