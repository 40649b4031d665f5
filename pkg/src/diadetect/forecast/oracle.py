"""Idealized forecaster: the true load perturbed by multiplicative Gaussian
error. It decouples detection experiments from model training."""

from __future__ import annotations

import numpy as np


def oracle_forecast(series, sigma: float, seed: int) -> np.ndarray:
    """prediction_t = y_t * (1 + eps_t) with eps_t ~ N(0, sigma), seeded."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    y = np.asarray(getattr(series, "values", series), dtype=float)
    eps = np.random.default_rng(seed).normal(0.0, 1.0, size=len(y)) * sigma
    return y * (1.0 + eps)
