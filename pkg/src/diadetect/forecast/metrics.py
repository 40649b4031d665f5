"""Forecast accuracy metrics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def _pair(actual, predicted):
    a = np.asarray(actual, dtype=float)
    p = np.asarray(predicted, dtype=float)
    if a.shape != p.shape or a.ndim != 1:
        raise ValueError("actual and predicted must be 1-D and of equal length")
    if len(a) == 0:
        raise ValueError("empty input")
    return a, p


def _nonzero(a):
    if np.any(a == 0):
        raise ValueError("actual contains a zero value")


def mape(actual, predicted) -> float:
    """Mean absolute percentage error as a fraction."""
    a, p = _pair(actual, predicted)
    _nonzero(a)
    return float(np.mean(np.abs(a - p) / np.abs(a)))


def rmse_scaled(actual, predicted) -> float:
    """sqrt(mean((a - p)^2 / a)): squared error divided by the actual value
    inside the mean, in sqrt(kW) units."""
    a, p = _pair(actual, predicted)
    _nonzero(a)
    return float(np.sqrt(np.mean((a - p) ** 2 / a)))


def rmse_standard(actual, predicted) -> float:
    """Conventional root mean squared error in kW."""
    a, p = _pair(actual, predicted)
    return float(np.sqrt(np.mean((a - p) ** 2)))


@dataclass
class ForecastReport:
    mape: float
    rmse_scaled: float
    rmse_standard: float
    predictions: np.ndarray = field(repr=False)
    actual: np.ndarray = field(repr=False)
    loss_curve: list | None = None

    @classmethod
    def from_predictions(cls, actual, predicted, loss_curve=None) -> "ForecastReport":
        a, p = _pair(actual, predicted)
        return cls(mape(a, p), rmse_scaled(a, p), rmse_standard(a, p), p, a, loss_curve)

    def summary(self) -> dict:
        out = {"mape": self.mape, "rmse_scaled": self.rmse_scaled,
               "rmse_standard": self.rmse_standard, "n": len(self.actual)}
        if self.loss_curve is not None:
            out["loss_curve"] = list(self.loss_curve)
        return out
