"""Areal embeddings for grid cells.

Two constructions are provided: a fixed sinusoidal 2D positional encoding of
the cell's column/row, and Node2Vec embeddings learned from a road-derived
cell adjacency graph (first-order weighted walks + skip-gram with negative
sampling).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numba
import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .geometry import ArealGrid, Geometry, line_cells

log = logging.getLogger(__name__)

SOURCES = ("sinusoidal", "node2vec")


@dataclass
class AreaEmbeddingTable:
    vectors: np.ndarray
    source: str

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=float)
        if self.vectors.ndim != 2:
            raise ValueError("embedding table must be 2-D")
        if self.source not in SOURCES:
            raise ValueError(f"unknown embedding source {self.source!r}")
        if not np.all(np.isfinite(self.vectors)):
            raise ValueError("embedding table has non-finite entries")

    @property
    def m(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def lookup(self, cells: np.ndarray) -> np.ndarray:
        return self.vectors[np.asarray(cells, dtype=np.int64)]

    def save(self, path) -> None:
        """Write ``m dim source`` then one comma-separated row per cell."""
        with open(path, "w", newline="\n") as fh:
            fh.write(f"{self.m} {self.dim} {self.source}\n")
            for row in self.vectors:
                fh.write(",".join(repr(float(v)) for v in row))
                fh.write("\n")

    @classmethod
    def load(cls, path) -> "AreaEmbeddingTable":
        with open(path) as fh:
            header = fh.readline().split()
            if len(header) != 3:
                raise ValueError(f"{path}: bad embedding header {header!r}")
            m, dim, source = int(header[0]), int(header[1]), header[2]
            rows = [line for line in fh.read().splitlines() if line.strip()]
        if len(rows) != m:
            raise ValueError(f"{path}: header says {m} rows, found {len(rows)}")
        vectors = np.array([[float(v) for v in r.split(",")] for r in rows], dtype=float).reshape(m, dim)
        return cls(vectors, source)


def sinusoidal_pe(grid: ArealGrid, dim: int, base: float = 10000.0) -> AreaEmbeddingTable:
    """2D sinusoidal positional encoding of each cell's (column, row).

    The first ``dim/2`` channels encode the column and the rest the row;
    within each half, channel ``2i`` is ``sin(pos * w_i)`` and ``2i+1`` is
    ``cos(pos * w_i)`` with ``w_i = base ** (-4i / dim)``.
    """
    if dim <= 0 or dim % 4 != 0:
        raise ValueError(f"dim must be a positive multiple of 4, got {dim}")
    freqs = base ** (-4.0 * np.arange(dim // 4) / dim)
    ix = np.tile(np.arange(grid.mx), grid.my).astype(float)
    iy = np.repeat(np.arange(grid.my), grid.mx).astype(float)
    out = np.empty((grid.n_cells, dim))
    half = dim // 2
    out[:, 0:half:2] = np.sin(ix[:, None] * freqs)
    out[:, 1:half:2] = np.cos(ix[:, None] * freqs)
    out[:, half::2] = np.sin(iy[:, None] * freqs)
    out[:, half + 1::2] = np.cos(iy[:, None] * freqs)
    return AreaEmbeddingTable(out, "sinusoidal")


@dataclass
class AdjacencyMatrix:
    """Symmetric integer-weighted cell graph stored as a sparse map."""

    m: int
    entries: dict = field(default_factory=dict)

    def __getitem__(self, key) -> int:
        return self.entries.get(key, 0)

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.m, self.m), dtype=np.int64)
        for (i, j), w in self.entries.items():
            out[i, j] = w
        return out

    def to_csr(self) -> tuple:
        """(indptr, indices, weights) with neighbours sorted by cell index."""
        rows: dict = {}
        for (i, j), w in self.entries.items():
            rows.setdefault(i, []).append((j, w))
        indptr = np.zeros(self.m + 1, dtype=np.int64)
        indices, weights = [], []
        for i in range(self.m):
            nbrs = sorted(rows.get(i, ()))
            indices.extend(j for j, _ in nbrs)
            weights.extend(w for _, w in nbrs)
            indptr[i + 1] = len(indices)
        return indptr, np.asarray(indices, dtype=np.int64), np.asarray(weights, dtype=float)

    @classmethod
    def from_edges(cls, m: int, edges: Iterable) -> "AdjacencyMatrix":
        """Undirected edges ``(i, j[, weight])``; each adds its weight both ways."""
        adj = cls(m)
        for e in edges:
            i, j = int(e[0]), int(e[1])
            w = int(e[2]) if len(e) > 2 else 1
            if i == j:
                continue
            adj.entries[(i, j)] = adj.entries.get((i, j), 0) + w
            adj.entries[(j, i)] = adj.entries.get((j, i), 0) + w
        return adj


def build_adjacency(roads: Sequence[Geometry], grid: ArealGrid) -> AdjacencyMatrix:
    """Count, for every ordered cell pair, the roads that traverse both cells."""
    adj = AdjacencyMatrix(grid.n_cells)
    for road in roads:
        cells = line_cells(road, grid)
        for u in cells:
            for v in cells:
                if u != v:
                    adj.entries[(u, v)] = adj.entries.get((u, v), 0) + 1
    return adj


def random_walks(adj: AdjacencyMatrix, num_walks: int = 10, walk_len: int = 40, seed: int = 0) -> list:
    """Weighted first-order random walks, ``num_walks`` from every cell.

    Each source cell draws its uniforms from its own stream seeded by
    ``(seed, cell)``. Walks from isolated cells stop at length 1.
    """
    if num_walks < 1 or walk_len < 2:
        raise ValueError("need num_walks >= 1 and walk_len >= 2")
    indptr, indices, weights = adj.to_csr()
    degree = np.diff(indptr)
    prefix = np.concatenate([[0.0], np.cumsum(weights)])
    row_sum = prefix[indptr[1:]] - prefix[indptr[:-1]]

    sources = np.arange(adj.m)
    moving = sources[degree > 0]
    steps = walk_len - 1
    u = np.empty((len(moving), num_walks, steps))
    for r, node in enumerate(moving):
        u[r] = np.random.default_rng([seed, int(node)]).random((num_walks, steps))

    paths = np.empty((len(moving), num_walks, walk_len), dtype=np.int64)
    paths[:, :, 0] = moving[:, None]
    cur = paths[:, :, 0].ravel()
    uu = u.reshape(-1, steps)
    for s in range(steps):
        lo = indptr[cur]
        target = prefix[lo] + uu[:, s] * row_sum[cur]
        k = np.searchsorted(prefix[1:], target, side="right")
        k = np.clip(k, lo, indptr[cur + 1] - 1)
        cur = indices[k]
        paths[:, :, s + 1] = cur.reshape(len(moving), num_walks)

    walks = []
    row_of = {int(n): r for r, n in enumerate(moving)}
    for node in sources:
        r = row_of.get(int(node))
        for w in range(num_walks):
            walks.append([int(node)] if r is None else paths[r, w].tolist())
    return walks


@dataclass
class Node2VecResult:
    table: AreaEmbeddingTable
    losses: list
    context_vectors: np.ndarray


def init_embeddings(m: int, dim: int, seed: int) -> np.ndarray:
    """Seeded ``uniform(-0.5/dim, 0.5/dim)`` input-vector initialisation."""
    rng = np.random.default_rng([seed, 7])
    return (rng.random((m, dim)) - 0.5) / dim


@numba.njit(cache=True, fastmath=True, error_model="numpy")
def _sgns_epoch(walks, lengths, order, w_in, w_out, noise_cdf, window, negatives,
                lr, lr_floor, done, total, rng_seed):
    # Sequential SGD over every (centre, context) pair of the walks in `order`.
    np.random.seed(rng_seed)
    m, dim = w_in.shape
    grad = np.zeros(dim)
    loss = 0.0
    n_pairs = 0
    for wi in order:
        length = lengths[wi]
        for i in range(length):
            c = walks[wi, i]
            lo = max(0, i - window)
            hi = min(length, i + window + 1)
            for j in range(lo, hi):
                if j == i:
                    continue
                o = walks[wi, j]
                alpha = lr * max(lr_floor, 1.0 - done / total)
                done += 1
                n_pairs += 1
                grad[:] = 0.0
                for k in range(negatives + 1):
                    if k == 0:
                        t = o
                        label = 1.0
                    else:
                        t = np.searchsorted(noise_cdf, np.random.random(), side="right")
                        if t >= m:
                            t = m - 1
                        if t == o:
                            continue
                        label = 0.0
                    x = 0.0
                    for d in range(dim):
                        x += w_in[c, d] * w_out[t, d]
                    f = 1.0 / (1.0 + np.exp(-x))
                    if label == 1.0:
                        loss -= np.log(max(f, 1e-12))
                    else:
                        loss -= np.log(max(1.0 - f, 1e-12))
                    g = (label - f) * alpha
                    for d in range(dim):
                        grad[d] += g * w_out[t, d]
                        w_out[t, d] += g * w_in[c, d]
                for d in range(dim):
                    w_in[c, d] += grad[d]
    return loss, n_pairs, done


def train_node2vec(
    walks: Sequence[Sequence[int]],
    dim: int = 64,
    window: int = 7,
    negatives: int = 5,
    epochs: int = 5,
    lr: float = 0.025,
    seed: int = 0,
    m: int | None = None,
    min_lr_frac: float = 1e-4,
    callback=None,
) -> Node2VecResult:
    """Skip-gram with negative sampling over (centre, context) pairs.

    Contexts are the walk positions at most ``window`` steps away. Updates
    are plain sequential SGD with the learning rate decaying linearly to
    ``lr * min_lr_frac``. Negatives come from the visit unigram distribution
    raised to 0.75; a negative equal to the positive context is skipped.
    Cells never visited get the zero vector. ``callback(epoch, w_in, w_out)``
    runs after every epoch.
    """
    if dim <= 0:
        raise ValueError(f"dim must be positive, got {dim}")
    if not walks:
        raise ValueError("no walks given")
    if m is None:
        m = 1 + max(max(w) for w in walks)

    lengths = np.array([len(w) for w in walks], dtype=np.int64)
    arr = np.zeros((len(walks), int(lengths.max())), dtype=np.int64)
    for r, w in enumerate(walks):
        arr[r, : len(w)] = w
    visits = np.bincount(np.concatenate([np.asarray(w, dtype=np.int64) for w in walks]), minlength=m)
    visited = visits > 0

    w_in = init_embeddings(m, dim, seed)
    w_in[~visited] = 0.0
    w_out = np.zeros((m, dim))
    noise = visits.astype(float) ** 0.75
    noise_cdf = np.cumsum(noise / noise.sum())

    per_epoch = int(np.sum(_pair_counts(lengths, window)))
    total = float(max(1, epochs * per_epoch))
    rng = np.random.default_rng([seed, 11])
    losses = []
    done = 0.0
    for _ in range(epochs):
        order = rng.permutation(len(walks))
        loss, n_pairs, done = _sgns_epoch(
            arr, lengths, order, w_in, w_out, noise_cdf, window, negatives,
            lr, min_lr_frac, done, total, int(rng.integers(2**31 - 1)),
        )
        losses.append(loss / max(n_pairs, 1))
        if callback is not None:
            callback(len(losses), w_in, w_out)

    w_in[~visited] = 0.0
    return Node2VecResult(AreaEmbeddingTable(w_in, "node2vec"), losses, w_out)


def _pair_counts(lengths: np.ndarray, window: int) -> np.ndarray:
    out = np.zeros(len(lengths), dtype=np.int64)
    for length in np.unique(lengths):
        i = np.arange(length)
        n = np.minimum(length, i + window + 1) - np.maximum(0, i - window) - 1
        out[lengths == length] = n.sum()
    return out

def node2vec_table(
    roads: Sequence[Geometry],
    grid: ArealGrid,
    dim: int = 64,
    num_walks: int = 10,
    walk_len: int = 40,
    window: int = 7,
    negatives: int = 5,
    epochs: int = 5,
    lr: float = 0.025,
    seed: int = 0,
) -> AreaEmbeddingTable:
    """Roads -> adjacency -> walks -> SGNS embeddings for every grid cell."""
    adj = build_adjacency(roads, grid)
    walks = random_walks(adj, num_walks, walk_len, seed)
    log.info("node2vec: %d cells, %d edges, %d walks", grid.n_cells, len(adj.entries), len(walks))
    res = train_node2vec(walks, dim, window, negatives, epochs, lr, seed, m=grid.n_cells)
    return res.table


class ArealEmbedder(TransformerMixin, BaseEstimator):
    """Append the areal embedding of each house's grid cell.

    Input rows start with ``lon, lat``. The grid covers the fitted houses'
    bounding box padded by 1% per side unless ``bbox`` is given.
    """

    def __init__(self, mode: str = "sinusoidal", dim: int = 64, mx: int = 100, my: int = 100,
                 bbox=None, roads=None, num_walks: int = 10, walk_len: int = 40, window: int = 7,
                 negatives: int = 5, epochs: int = 5, lr: float = 0.025, seed: int = 0):
        self.mode = mode
        self.dim = dim
        self.mx = mx
        self.my = my
        self.bbox = bbox
        self.roads = roads
        self.num_walks = num_walks
        self.walk_len = walk_len
        self.window = window
        self.negatives = negatives
        self.epochs = epochs
        self.lr = lr
        self.seed = seed

    def fit(self, X, y=None):
        X = check_array(X)
        self.grid_ = (
            ArealGrid(tuple(self.bbox), self.mx, self.my) if self.bbox is not None
            else ArealGrid.around(X[:, :2], self.mx, self.my)
        )
        if self.mode == "sinusoidal":
            self.table_ = sinusoidal_pe(self.grid_, self.dim)
        elif self.mode == "node2vec":
            if self.roads is None:
                raise ValueError("node2vec mode needs roads")
            self.table_ = node2vec_table(
                self.roads, self.grid_, self.dim, self.num_walks, self.walk_len, self.window,
                self.negatives, self.epochs, self.lr, self.seed,
            )
        else:
            raise ValueError(f"unknown mode {self.mode!r}")
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "table_")
        X = check_array(X)
        return np.hstack([X, self.table_.lookup(self.grid_.assign(X[:, :2]))])
