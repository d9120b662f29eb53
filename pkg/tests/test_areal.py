import math

import numpy as np
import pytest
from helpers import clique_gap, cosine_matrix, random_roads

from ammasi.areal import (AdjacencyMatrix, AreaEmbeddingTable, ArealEmbedder, build_adjacency, init_embeddings,
                          random_walks, sinusoidal_pe, train_node2vec)
from ammasi.geometry import ArealGrid, Geometry, line_cells


def test_sinusoidal_origin_alternates():
    table = sinusoidal_pe(ArealGrid((0, 0, 1, 1), 4, 4), 16)
    assert np.array_equal(table.vectors[0], np.tile([0.0, 1.0], 8))


def test_sinusoidal_distinct_bounded_deterministic():
    grid = ArealGrid((0, 0, 1, 1), 10, 10)
    v = sinusoidal_pe(grid, 16).vectors
    d = np.linalg.norm(v[:, None] - v[None], axis=2) + np.eye(100)
    assert d.min() > 0
    assert np.abs(v).max() <= 1.0
    assert np.array_equal(v, sinusoidal_pe(grid, 16).vectors)


def test_sinusoidal_depends_only_on_cell_position():
    a = sinusoidal_pe(ArealGrid((0, 0, 1, 1), 10, 10), 8).vectors
    b = sinusoidal_pe(ArealGrid((5, 5, 9, 7), 12, 11), 8).vectors
    # cell (ix=3, iy=2) in both grids
    assert np.array_equal(a[2 * 10 + 3], b[2 * 12 + 3])


def test_sinusoidal_formula():
    v = sinusoidal_pe(ArealGrid((0, 0, 1, 1), 10, 10), 8).vectors
    ix, iy = 7, 4
    w = [1.0, 10000 ** (-0.5)]
    expect = [math.sin(ix * w[0]), math.cos(ix * w[0]), math.sin(ix * w[1]), math.cos(ix * w[1]),
              math.sin(iy * w[0]), math.cos(iy * w[0]), math.sin(iy * w[1]), math.cos(iy * w[1])]
    assert v[iy * 10 + ix] == pytest.approx(expect, abs=1e-15)


def test_sinusoidal_dim_check():
    with pytest.raises(ValueError):
        sinusoidal_pe(ArealGrid((0, 0, 1, 1), 2, 2), 10)


def test_adjacency_definition_examples():
    grid = ArealGrid((0, 0, 10, 1), 10, 1)
    road = Geometry.polyline([[1.5, 0.5], [3.5, 0.5]])
    assert line_cells(road, grid) == [1, 2, 3]
    adj = build_adjacency([road], grid)
    assert adj.entries == {(a, b): 1 for a in (1, 2, 3) for b in (1, 2, 3) if a != b}
    two = build_adjacency([Geometry.polyline([[1.2, 0.5], [2.2, 0.5]])] * 2, grid)
    assert two.entries == {(1, 2): 2, (2, 1): 2}
    assert build_adjacency([], grid).entries == {}


def test_adjacency_matches_double_loop_oracle():
    rng = np.random.default_rng(0)
    grid = ArealGrid((0, 0, 1, 1), 12, 9)
    roads = random_roads(rng, 50)
    dense = build_adjacency(roads, grid).to_dense()
    oracle = np.zeros((grid.n_cells, grid.n_cells), dtype=np.int64)
    for r in roads:
        cells = line_cells(r, grid)
        for u in range(grid.n_cells):
            for v in range(grid.n_cells):
                if u != v and u in cells and v in cells:
                    oracle[u, v] += 1
    assert np.array_equal(dense, oracle)
    assert np.array_equal(dense, dense.T) and not np.any(np.diag(dense))


def test_adjacency_relabeling_equivariance():
    rng = np.random.default_rng(1)
    grid = ArealGrid((0, 0, 1, 1), 4, 4)
    roads = random_roads(rng, 10)
    base = build_adjacency(roads, grid).to_dense()
    # mirror x: cell (ix, iy) -> (3 - ix, iy) is a permutation of cells
    mirrored = [Geometry.polyline(np.column_stack([1 - r.parts[0][:, 0], r.parts[0][:, 1]])) for r in roads]
    perm = np.array([iy * 4 + (3 - ix) for iy in range(4) for ix in range(4)])
    got = build_adjacency(mirrored, grid).to_dense()
    assert np.array_equal(got[np.ix_(perm, perm)], base)


def test_walks_path_graph_and_isolated():
    adj = AdjacencyMatrix.from_edges(3, [(1, 2)])
    walks = random_walks(adj, num_walks=2, walk_len=6, seed=0)
    assert walks[0] == [0] and walks[1] == [0]
    assert walks[2] == [1, 2, 1, 2, 1, 2]
    assert walks[4] == [2, 1, 2, 1, 2, 1]


def test_walk_validation():
    with pytest.raises(ValueError):
        random_walks(AdjacencyMatrix(2), num_walks=0)
    with pytest.raises(ValueError):
        random_walks(AdjacencyMatrix(2), walk_len=1)


def test_star_graph_frequencies():
    adj = AdjacencyMatrix.from_edges(5, [(0, k) for k in range(1, 5)])
    walks = random_walks(adj, num_walks=5000, walk_len=5, seed=3)
    steps = [w[i + 1] for w in walks[:5000] for i in range(0, 4, 2)]
    counts = np.bincount(steps, minlength=5)[1:] / len(steps)
    assert np.all(np.abs(counts - 0.25) < 0.02)


def test_weighted_steps_within_binomial_bounds():
    adj = AdjacencyMatrix.from_edges(4, [(0, 1, 1), (0, 2, 2), (0, 3, 5)])
    walks = random_walks(adj, num_walks=10_000, walk_len=2, seed=9)
    first = np.array([w[1] for w in walks[:10_000]])
    for node, p in ((1, 1 / 8), (2, 2 / 8), (3, 5 / 8)):
        sd = math.sqrt(p * (1 - p) / 10_000)
        assert abs(np.mean(first == node) - p) < 3 * sd


def test_walks_deterministic_and_start_at_source():
    adj = AdjacencyMatrix.from_edges(6, [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 0)])
    a = random_walks(adj, 3, 10, seed=4)
    assert a == random_walks(adj, 3, 10, seed=4)
    assert a != random_walks(adj, 3, 10, seed=5)
    assert [w[0] for w in a] == [n for n in range(6) for _ in range(3)]
    for w in a:
        assert all(adj[u, v] > 0 for u, v in zip(w[:-1], w[1:]))


def test_node2vec_clique_structure():
    assert clique_gap() > 0.2


def test_node2vec_zero_epochs_is_seeded_init():
    walks = [[0, 1, 2], [2, 1, 0]]
    table = train_node2vec(walks, dim=8, epochs=0, seed=3, m=4).table
    init = init_embeddings(4, 8, 3)
    init[3] = 0.0
    assert np.array_equal(table.vectors, init)


def test_node2vec_unvisited_rows_zero_and_deterministic():
    walks = [[0, 1, 0, 1], [1, 0, 1, 0], [3, 4, 3, 4]]
    a = train_node2vec(walks, dim=8, epochs=3, seed=1, m=6)
    b = train_node2vec(walks, dim=8, epochs=3, seed=1, m=6)
    assert np.array_equal(a.table.vectors, b.table.vectors)
    assert not a.table.vectors[2].any() and not a.table.vectors[5].any()
    assert a.table.vectors[0].any()


def test_node2vec_pair_cosine_rises():
    # centre/context cosine of a pair that co-occurs in every window
    trace = []
    train_node2vec([[0, 1]] * 50, dim=16, window=1, epochs=10, seed=0, m=2,
                   callback=lambda e, w_in, w_out: trace.append(cosine_matrix(np.vstack([w_in[0], w_out[1]]))[0, 1]))
    assert len(trace) == 10
    assert np.all(np.diff(trace) > 0)


def test_node2vec_loss_decreases_on_cliques():
    from helpers import two_cliques
    walks = random_walks(two_cliques(), seed=0)
    losses = train_node2vec(walks, epochs=6, seed=0).losses
    assert losses[-1] < losses[0]
    assert np.mean(np.diff(losses)) <= 0


def test_node2vec_dim_error():
    with pytest.raises(ValueError):
        train_node2vec([[0, 1]], dim=0)


def test_embedding_table_roundtrip(tmp_path):
    t = AreaEmbeddingTable(np.random.default_rng(0).normal(size=(6, 4)), "node2vec")
    t.save(tmp_path / "e.txt")
    back = AreaEmbeddingTable.load(tmp_path / "e.txt")
    assert np.array_equal(back.vectors, t.vectors) and back.source == "node2vec"
    assert (tmp_path / "e.txt").read_text().splitlines()[0] == "6 4 node2vec"
    with pytest.raises(ValueError):
        AreaEmbeddingTable(np.array([[np.nan]]), "node2vec")


def test_areal_embedder_transformer():
    X = np.array([[0.0, 0.0, 1.0], [1.0, 1.0, 2.0]])
    emb = ArealEmbedder(mode="sinusoidal", dim=8, mx=4, my=4).fit(X)
    out = emb.transform(X)
    assert out.shape == (2, 11)
    assert np.array_equal(out[0, 3:], emb.table_.vectors[0])
    with pytest.raises(ValueError):
        ArealEmbedder(mode="node2vec").fit(X)
