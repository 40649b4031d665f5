"""Uniform forecaster interface used by the detector.

A forecaster maps the last ``lookback`` loads (kW) to the next-hour load (kW).
``forecast_series(values, t0)`` predicts every point of ``values`` that has a
full lookback window inside it, i.e. indices ``lookback..len(values)-1``;
``t0`` is the stream index of ``values[0]`` (only the oracle uses it).
"""

from __future__ import annotations

from dataclasses import asdict, replace

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..data import MinMaxScaling, build_windows
from . import recurrent
from .etr import EtrParams, train_etr
from .oracle import oracle_forecast


class ModelForecaster:
    """Wraps a trained ETR ensemble or recurrent parameter set together with
    its input scaling."""

    def __init__(self, arch: str, model, scaling: MinMaxScaling, lookback: int, meta=None):
        if arch not in ("etr", "lstm", "bilstm"):
            raise ValueError(f"unknown architecture {arch!r}")
        self.arch = arch
        self.model = model
        self.scaling = scaling
        self.lookback = int(lookback)
        self.meta = dict(meta or {})

    @property
    def tag(self) -> str:
        return {"etr": "EE-ETR", "lstm": "EE-LSTM", "bilstm": "EE-BiLSTM"}[self.arch]

    def predict_windows(self, windows) -> np.ndarray:
        W = np.atleast_2d(np.asarray(windows, dtype=float))
        if W.shape[1] != self.lookback:
            raise ValueError(f"expected windows of length {self.lookback}")
        Z = self.scaling.scale(W)
        if self.arch == "etr":
            out = self.model.predict(Z)
        else:
            out = recurrent.predict(self.model, Z)
        return self.scaling.unscale(out)

    def predict_next(self, window, t: int | None = None) -> float:
        return float(self.predict_windows(np.asarray(window, dtype=float)[None, :])[0])

    def forecast_series(self, values, t0: int = 0) -> np.ndarray:
        v = np.asarray(values, dtype=float)
        if len(v) <= self.lookback:
            raise ValueError("series shorter than the lookback")
        return self.predict_windows(sliding_window_view(v, self.lookback)[:-1])


class OracleForecaster:
    """Forecasts stream index t as truth[t] * (1 + eps_t); ignores history."""

    lookback = 0
    tag = "EE-Oracle"
    arch = "oracle"

    def __init__(self, predictions, sigma: float | None = None, seed: int | None = None):
        self.predictions = np.asarray(predictions, dtype=float)
        self.sigma = sigma
        self.seed = seed

    @classmethod
    def simulate(cls, truth, sigma: float, seed: int) -> OracleForecaster:
        return cls(oracle_forecast(truth, sigma, seed), sigma, seed)

    def predict_next(self, window, t: int) -> float:
        return float(self.predictions[t])

    def forecast_series(self, values, t0: int = 0) -> np.ndarray:
        return self.predictions[t0:t0 + len(values)].copy()


def train_forecaster(train_values, arch: str, lookback: int = 14, etr_params=None,
                     train_config=None, seed: int = 0, jobs: int = 1, log=None):
    """Fit min/max scaling on ``train_values``, window them and train ``arch``.

    Returns (ModelForecaster, info) where info holds training metadata.
    """
    values = np.asarray(getattr(train_values, "values", train_values), dtype=float)
    ds = build_windows(values, lookback)
    info = {"n_train": len(ds)}
    if arch == "etr":
        params = etr_params or EtrParams()
        model = train_etr(ds, params, seed=seed, jobs=jobs)
        info["etr"] = asdict(params)
    elif arch in ("lstm", "bilstm"):
        cfg = train_config or recurrent.TrainConfig()
        cfg = replace(cfg, seed=seed)
        result = recurrent.train_recurrent(ds, cfg, arch, log=log)
        model = result.params
        info["train_config"] = asdict(cfg)
        info["loss_curve"] = list(result.loss_curve)
        info["initial_loss"] = result.initial_loss
    else:
        raise ValueError(f"unknown architecture {arch!r}")
    return ModelForecaster(arch, model, ds.scaling, lookback, {"seed": seed, **info}), info
