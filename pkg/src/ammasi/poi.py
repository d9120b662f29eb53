"""Gaussian POI proximity features and the linear-regression studies built on them."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .geometry import GeoPoint, Geometry

# OpenStreetMap tag groups collected per region
POI_TYPES = (
    "amenity-hospital",
    "amenity-university",
    "amenity-school",
    "amenity-place_of_worship",
    "landuse-cemetery",
    "landuse-commercial",
    "landuse-industrial",
    "landuse-retail",
    "landuse-railway",
    "leisure-golf_course",
    "leisure-park",
    "leisure-sports_centre",
    "natural-water",
    "natural-wood",
    "aeroway-aerodrome",
)


def gaussian_proximity(dist, beta: float) -> np.ndarray:
    """``exp(-dist**2 / (2 beta**2))`` elementwise."""
    if not beta > 0:
        raise ValueError(f"beta must be positive, got {beta}")
    dist = np.asarray(dist, dtype=float)
    return np.exp(-(dist * dist) / (2.0 * beta * beta))


def poi_distances(lonlat: np.ndarray, poi_geoms: Sequence[Geometry]) -> np.ndarray:
    """(n, N_P) planar distances from each house to each POI-type geometry."""
    if len(poi_geoms) == 0:
        raise ValueError("no POI geometries given")
    pts = np.atleast_2d(np.asarray(lonlat, dtype=float))
    return np.column_stack([g.distance(pts) for g in poi_geoms])


def proximity_vector(house: GeoPoint, poi_geoms: Sequence[Geometry], beta: float) -> np.ndarray:
    if not beta > 0:
        raise ValueError(f"beta must be positive, got {beta}")
    return gaussian_proximity(poi_distances(house.as_array()[None, :], poi_geoms)[0], beta)


def proximity_matrix(lonlat: np.ndarray, poi_geoms: Sequence[Geometry], beta: float) -> np.ndarray:
    if not beta > 0:
        raise ValueError(f"beta must be positive, got {beta}")
    return gaussian_proximity(poi_distances(lonlat, poi_geoms), beta)


class SingularDesignError(ValueError):
    """Raised when a regression design matrix is rank deficient."""

    def __init__(self, columns):
        self.columns = list(columns)
        super().__init__(f"design matrix is rank deficient; collinear columns: {self.columns}")


@dataclass
class OlsReport:
    """Least-squares fit; the last entry of each vector is the intercept."""

    coefficients: np.ndarray
    t_stats: np.ndarray
    significant: np.ndarray
    r_squared: float
    std_errors: np.ndarray
    critical_t: float
    names: tuple = ()


def _collinear_columns(X: np.ndarray) -> list:
    kept, dropped = [], []
    for j in range(X.shape[1]):
        trial = kept + [j]
        if np.linalg.matrix_rank(X[:, trial]) == len(trial):
            kept = trial
        else:
            dropped.append(j)
    return dropped


def ols_fit(X, y, critical_t: float = 1.96, names: Sequence[str] = ()) -> OlsReport:
    """Ordinary least squares of ``y`` on ``X`` plus an intercept column.

    Standard errors come from ``s^2 (X'X)^-1`` with ``s^2 = SSR / (n - p)``;
    a coefficient is significant when ``|t|`` exceeds ``critical_t``.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=float).ravel()
    n, k = X.shape
    if len(y) != n:
        raise ValueError(f"X has {n} rows but y has {len(y)}")
    if n <= k:
        raise ValueError(f"need more rows than columns (n={n}, k={k})")
    A = np.hstack([X, np.ones((n, 1))])
    p = k + 1
    if np.linalg.matrix_rank(A) < p:
        labels = list(names) + ["intercept"] if names else None
        cols = _collinear_columns(A)
        raise SingularDesignError([labels[c] for c in cols] if labels else cols)

    gram = A.T @ A
    coef = np.linalg.solve(gram, A.T @ y)
    resid = y - A @ coef
    ssr = float(resid @ resid)
    sst = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ssr / sst if sst > 0 else 0.0

    dof = n - p
    sigma2 = ssr / dof if dof > 0 else 0.0
    se = np.sqrt(np.maximum(sigma2 * np.diag(np.linalg.inv(gram)), 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(se > 0, coef / np.where(se > 0, se, 1.0), np.sign(coef) * np.inf)
    t = np.nan_to_num(t, nan=0.0, posinf=np.inf, neginf=-np.inf)
    return OlsReport(
        coefficients=coef,
        t_stats=t,
        significant=np.abs(t) > critical_t,
        r_squared=r2,
        std_errors=se,
        critical_t=critical_t,
        names=tuple(names) + ("intercept",) if names else (),
    )


@dataclass
class BetaSweepResult:
    betas: np.ndarray
    r_squared: np.ndarray

    @property
    def best_beta(self) -> float:
        # argmax takes the first maximum, i.e. the smallest beta among ties
        order = np.argsort(self.betas, kind="stable")
        return float(self.betas[order][np.argmax(self.r_squared[order])])

    def rows(self) -> list:
        return [(float(b), float(r)) for b, r in zip(self.betas, self.r_squared)]


def beta_sweep(lonlat, prices, poi_geoms: Sequence[Geometry], beta_grid: Sequence[float]) -> BetaSweepResult:
    """In-sample R^2 of prices regressed on proximity features, per beta."""
    betas = np.asarray(list(beta_grid), dtype=float)
    if betas.size == 0:
        raise ValueError("empty beta grid")
    prices = np.asarray(prices, dtype=float).ravel()
    if len(prices) < len(poi_geoms) + 2:
        raise ValueError(f"need at least {len(poi_geoms) + 2} houses, got {len(prices)}")
    dists = poi_distances(lonlat, poi_geoms)
    r2 = np.array([ols_fit(gaussian_proximity(dists, b), prices).r_squared for b in betas])
    return BetaSweepResult(betas, r2)


class ProximityFeatures(TransformerMixin, BaseEstimator):
    """Append Gaussian POI proximities to a house matrix.

    Input rows start with ``lon, lat`` (columns ``lonlat_cols``); the output
    is the input with one proximity column per POI type appended.

    Parameters
    ----------
    poi_geoms : mapping of POI type to Geometry, or a sequence of Geometry
    beta : float
        Gaussian scale in degrees.
    lonlat_cols : tuple of int
    """

    def __init__(self, poi_geoms=None, beta: float = 0.045, lonlat_cols=(0, 1)):
        self.poi_geoms = poi_geoms
        self.beta = beta
        self.lonlat_cols = lonlat_cols

    def _geoms(self) -> list:
        if self.poi_geoms is None:
            raise ValueError("poi_geoms is required")
        if isinstance(self.poi_geoms, Mapping):
            return list(self.poi_geoms.values())
        return list(self.poi_geoms)

    def fit(self, X, y=None):
        X = check_array(X)
        if not self.beta > 0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        geoms = self._geoms()
        if not geoms:
            raise ValueError("no POI geometries given")
        self.n_features_in_ = X.shape[1]
        self.poi_types_ = (
            list(self.poi_geoms.keys()) if isinstance(self.poi_geoms, Mapping) else [f"poi_{i}" for i in range(len(geoms))]
        )
        return self

    def transform(self, X):
        check_is_fitted(self, "poi_types_")
        X = check_array(X)
        prox = proximity_matrix(X[:, list(self.lonlat_cols)], self._geoms(), self.beta)
        return np.hstack([X, prox])
