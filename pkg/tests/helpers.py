"""Shared fixtures and oracles for the test suite."""

import numpy as np

from ammasi.areal import AdjacencyMatrix, random_walks, train_node2vec
from ammasi.data import gen_synthetic


def two_cliques(size=5):
    edges = [(i, j) for block in (range(size), range(size, 2 * size)) for i in block for j in block if i < j]
    return AdjacencyMatrix.from_edges(2 * size, edges)


def cosine_matrix(v):
    n = np.linalg.norm(v, axis=1, keepdims=True)
    u = v / np.where(n > 0, n, 1.0)
    return u @ u.T


def clique_gap(seed=0, size=5, **kw):
    """Mean intra-clique minus mean inter-clique cosine after default training."""
    walks = random_walks(two_cliques(size), seed=seed)
    table = train_node2vec(walks, seed=seed, **kw).table
    cos = cosine_matrix(table.vectors)
    block = np.repeat([0, 1], size)
    same = block[:, None] == block[None, :]
    off_diag = ~np.eye(2 * size, dtype=bool)
    return cos[same & off_diag].mean() - cos[~same].mean()


def small_fixture(seed=0, n=200, **kw):
    kw.setdefault("n_poi_types", 5)
    fx = gen_synthetic(seed, n_houses=n, **kw)
    return fx, fx.houses.with_poi(fx.components["prox"])


def random_roads(rng, n):
    """Random 2-4 vertex polylines that may leave the unit square slightly."""
    from ammasi.geometry import Geometry

    return [Geometry.polyline(rng.uniform(-0.05, 1.05, (rng.integers(2, 5), 2))) for _ in range(n)]
