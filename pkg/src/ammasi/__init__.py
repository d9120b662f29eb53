"""House price estimation with masked multi-head attention over reference
houses, POI proximity features and areal embeddings."""

from .areal import (
    AreaEmbeddingTable, ArealEmbedder, build_adjacency, node2vec_table, random_walks, sinusoidal_pe,
    train_node2vec,
)
from .config import REGIONS, RunConfig, load_config
from .data import DataError, HouseData, HouseRecord, gen_synthetic, load_geojson, load_houses, write_houses
from .geometry import ArealGrid, GeoPoint, Geometry, assign_cell, dist_point_to_geometry, line_cells
from .knn import ReferenceIndex, ReferenceSet, feat_knn, geo_knn
from .metrics import MetricTriple, male, mdape, price_metrics, rmse
from .model import (
    AmmasiConfig, AmmasiModel, AmmasiRegressor, ConfigError, evaluate, loss_male, sigma_sweep, train,
)
from .poi import (
    POI_TYPES, ProximityFeatures, beta_sweep, gaussian_proximity, ols_fit, proximity_matrix,
    proximity_vector,
)

__all__ = [
    "AmmasiConfig", "AmmasiModel", "AmmasiRegressor", "AreaEmbeddingTable", "ArealEmbedder", "ArealGrid",
    "assign_cell", "beta_sweep", "build_adjacency", "ConfigError", "DataError", "dist_point_to_geometry",
    "evaluate", "feat_knn", "gaussian_proximity", "gen_synthetic", "geo_knn", "Geometry", "GeoPoint",
    "HouseData", "HouseRecord", "line_cells", "load_config", "load_geojson", "load_houses", "loss_male",
    "male", "mdape", "MetricTriple", "node2vec_table", "ols_fit", "POI_TYPES", "price_metrics",
    "proximity_matrix", "proximity_vector", "ProximityFeatures", "random_walks", "ReferenceIndex",
    "ReferenceSet", "REGIONS", "rmse", "RunConfig", "sigma_sweep", "sinusoidal_pe", "train",
    "train_node2vec", "write_houses",
]

__version__ = "0.1.0"
