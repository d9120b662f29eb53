"""Reference-house selection: geographic and feature-space nearest neighbours.

Selection is exact brute force. Ties in distance go to the lower training
index, and a query that is itself a training house never references itself.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np


@dataclass
class ReferenceSet:
    """Per-query neighbour lists into the training split, sorted by distance."""

    g_idx: np.ndarray
    g_dist: np.ndarray
    s_idx: np.ndarray
    s_dist: np.ndarray

    def __len__(self) -> int:
        return len(self.g_idx)

    def save_csv(self, path, house_ids) -> None:
        n_g, n_s = self.g_idx.shape[1], self.s_idx.shape[1]
        header = ["house_id"]
        header += [f"{p}_{k}" for k in range(1, n_g + 1) for p in ("g_idx", "g_dist")]
        header += [f"{p}_{k}" for k in range(1, n_s + 1) for p in ("s_idx", "s_dist")]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r, hid in enumerate(house_ids):
                row = [hid]
                for i, d in zip(self.g_idx[r], self.g_dist[r]):
                    row += [int(i), repr(float(d))]
                for i, d in zip(self.s_idx[r], self.s_dist[r]):
                    row += [int(i), repr(float(d))]
                w.writerow(row)

    @classmethod
    def load_csv(cls, path) -> tuple:
        """Returns ``(house_ids, ReferenceSet)``."""
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        n_g = sum(1 for h in header if h.startswith("g_idx_"))
        n_s = sum(1 for h in header if h.startswith("s_idx_"))
        ids = [r[0] for r in body]
        vals = np.array([[float(v) for v in r[1:]] for r in body]).reshape(len(body), -1)
        g = vals[:, : 2 * n_g].reshape(len(body), n_g, 2)
        s = vals[:, 2 * n_g:].reshape(len(body), n_s, 2)
        return ids, cls(g[:, :, 0].astype(np.int64), g[:, :, 1], s[:, :, 0].astype(np.int64), s[:, :, 1])


def _select(dist: np.ndarray, k: int) -> tuple:
    # k smallest per row, ordered by (distance, index)
    n_q, n = dist.shape
    if k == n:
        order = np.argsort(dist, axis=1, kind="stable")
        return order, np.take_along_axis(dist, order, axis=1)
    kth = np.partition(dist, k - 1, axis=1)[:, k - 1:k]
    idx = np.empty((n_q, k), dtype=np.int64)
    for r in range(n_q):
        cand = np.flatnonzero(dist[r] <= kth[r, 0])
        cand = cand[np.argsort(dist[r, cand], kind="stable")][:k]
        idx[r] = cand
    return idx, np.take_along_axis(dist, idx, axis=1)


def knn_search(train: np.ndarray, query: np.ndarray, k: int, exclude=None) -> tuple:
    """Exact Euclidean k-nearest rows of ``train`` for each row of ``query``.

    ``exclude`` gives, per query, a training index to skip (or -1).
    """
    train = np.asarray(train, dtype=float)
    query = np.asarray(query, dtype=float)
    if exclude is None:
        exclude = np.full(len(query), -1, dtype=np.int64)
    exclude = np.asarray(exclude, dtype=np.int64)
    available = len(train) - (1 if np.any(exclude >= 0) else 0)
    if k < 1 or k > available:
        raise ValueError(f"k={k} too large for {len(train)} training houses")
    chunk = max(1, 4_000_000 // max(1, train.size))
    out_idx = np.empty((len(query), k), dtype=np.int64)
    out_dist = np.empty((len(query), k))
    for start in range(0, len(query), chunk):
        q = query[start:start + chunk]
        diff = q[:, None, :] - train[None, :, :]
        d = np.sqrt(np.einsum("qnd,qnd->qn", diff, diff))
        ex = exclude[start:start + chunk]
        rows = np.flatnonzero(ex >= 0)
        d[rows, ex[rows]] = np.inf
        out_idx[start:start + chunk], out_dist[start:start + chunk] = _select(d, k)
    return out_idx, out_dist


@dataclass
class FeatureScaler:
    """Z-score with training-split statistics; constant columns keep unit scale."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, X) -> "FeatureScaler":
        X = np.asarray(X, dtype=float)
        std = X.std(axis=0)
        return cls(X.mean(axis=0), np.where(std > 0, std, 1.0))

    def transform(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.mean) / self.std


def geo_knn(train_lonlat, query_lonlat, n_g: int, exclude=None) -> tuple:
    """Nearest training houses by planar lon/lat distance (degrees)."""
    return knn_search(np.atleast_2d(train_lonlat), np.atleast_2d(query_lonlat), n_g, exclude)


def feat_knn(train_feats, query_feats, n_s: int, exclude=None, scaler: FeatureScaler | None = None) -> tuple:
    """Nearest training houses by Euclidean distance of z-scored features."""
    train_feats = np.atleast_2d(np.asarray(train_feats, dtype=float))
    scaler = scaler or FeatureScaler.fit(train_feats)
    return knn_search(scaler.transform(train_feats), scaler.transform(np.atleast_2d(query_feats)), n_s, exclude)


class ReferenceIndex:
    """Training-split index answering both neighbour queries at once."""

    def __init__(self, train_lonlat, train_feats, n_g: int = 20, n_s: int = 20):
        self.lonlat = np.asarray(train_lonlat, dtype=float)
        self.feats = np.asarray(train_feats, dtype=float)
        if len(self.lonlat) != len(self.feats):
            raise ValueError("location and feature rows differ in count")
        self.n_g = n_g
        self.n_s = n_s
        self.scaler = FeatureScaler.fit(self.feats)
        self._z = self.scaler.transform(self.feats)

    def query(self, lonlat, feats, exclude=None) -> ReferenceSet:
        g_idx, g_dist = knn_search(self.lonlat, lonlat, self.n_g, exclude)
        s_idx, s_dist = knn_search(self._z, self.scaler.transform(feats), self.n_s, exclude)
        return ReferenceSet(g_idx, g_dist, s_idx, s_dist)

    def query_train(self) -> ReferenceSet:
        """References for the training houses themselves, self excluded."""
        return self.query(self.lonlat, self.feats, exclude=np.arange(len(self.lonlat)))
