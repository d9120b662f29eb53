"""Price error measures: MALE, RMSE and MdAPE."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np


@dataclass(frozen=True)
class MetricTriple:
    male: float
    rmse: float
    mdape: float

    def as_dict(self) -> dict:
        return asdict(self)


def _pair(y, yhat) -> tuple:
    y = np.asarray(y, dtype=float).ravel()
    yhat = np.asarray(yhat, dtype=float).ravel()
    if y.shape != yhat.shape:
        raise ValueError(f"length mismatch: {y.size} targets vs {yhat.size} predictions")
    if y.size == 0:
        raise ValueError("empty input")
    return y, yhat


def male(y, yhat) -> float:
    """Mean absolute difference of natural-log prices."""
    y, yhat = _pair(y, yhat)
    if np.any(y <= 0) or np.any(yhat <= 0):
        raise ValueError("MALE needs strictly positive prices")
    return float(np.mean(np.abs(np.log(y) - np.log(yhat))))


def rmse(y, yhat) -> float:
    y, yhat = _pair(y, yhat)
    return float(np.sqrt(np.mean((y - yhat) ** 2)))


def mdape(y, yhat) -> float:
    """Median absolute percentage error, in percent."""
    y, yhat = _pair(y, yhat)
    if np.any(y == 0):
        raise ValueError("MdAPE undefined for a zero target")
    return float(np.median(np.abs(y - yhat) / np.abs(y)) * 100.0)


def price_metrics(y, yhat) -> MetricTriple:
    return MetricTriple(male(y, yhat), rmse(y, yhat), mdape(y, yhat))
