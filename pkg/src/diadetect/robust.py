"""Robust covariance (FastMCD), Mahalanobis distance and the elliptic
envelope decision rule, with an adaptive contamination tracker."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.stats import chi2

from . import kernels

VARIANCE_FLOOR = 1e-9


@dataclass(frozen=True)
class EnvelopeModel:
    location: np.ndarray
    covariance: np.ndarray
    precision: np.ndarray
    contamination: float
    threshold: float
    support_fraction: float | None = None
    n_train: int = 0

    @property
    def dim(self) -> int:
        return len(self.location)

    def to_dict(self) -> dict:
        return {"location": self.location.tolist(), "covariance": self.covariance.tolist(),
                "contamination": self.contamination, "threshold": self.threshold,
                "support_fraction": self.support_fraction, "n_train": self.n_train}

    @classmethod
    def from_dict(cls, d: dict) -> EnvelopeModel:
        cov = np.asarray(d["covariance"], dtype=float)
        return cls(np.asarray(d["location"], dtype=float), cov, _precision(cov),
                   float(d["contamination"]), float(d["threshold"]), d.get("support_fraction"),
                   int(d.get("n_train", 0)))


def _precision(cov):
    p = np.linalg.inv(cov)
    return 0.5 * (p + p.T)


def _as_points(data) -> np.ndarray:
    X = np.asarray(data, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise ValueError("data must be a vector or an n x d matrix")
    return np.ascontiguousarray(X)


def _as_point(x, d: int) -> np.ndarray:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (d,):
        raise ValueError(f"expected a {d}-vector, got shape {x.shape}")
    return x


def mahalanobis(x, model: EnvelopeModel) -> float:
    """sqrt((x - mu)^T C^-1 (x - mu))."""
    diff = _as_point(x, model.dim) - model.location
    return math.sqrt(max(float(diff @ model.precision @ diff), 0.0))


def distances(data, location, precision) -> np.ndarray:
    """Mahalanobis distance of every row of ``data``."""
    diff = _as_points(data) - location
    if diff.shape[1] != len(location):
        raise ValueError("dimension mismatch")
    return np.sqrt(np.maximum(np.einsum("ij,jk,ik->i", diff, precision, diff), 0.0))


@lru_cache(maxsize=256)
def consistency_factor(h: int, n: int, d: int) -> float:
    """Rescales the covariance of the h most central of n Gaussian points so
    it is unbiased for the full covariance."""
    alpha = h / n
    if alpha >= 1.0:
        return 1.0
    return alpha / chi2.cdf(chi2.ppf(alpha, d), d + 2)


def support_size(n: int, d: int, support_fraction: float | None) -> int:
    if support_fraction is None:
        return (n + d + 1) // 2
    if not 0.5 <= support_fraction <= 1.0:
        raise ValueError("support_fraction must lie in [0.5, 1]")
    # round first so 0.8 * 1000 does not become 801
    return min(n, max(d + 1, math.ceil(round(support_fraction * n, 9))))


@dataclass(frozen=True)
class McdResult:
    location: np.ndarray
    covariance: np.ndarray
    support: np.ndarray
    logdet: float
    h: int

    def __iter__(self):
        yield self.location
        yield self.covariance


def fast_mcd(data, support_fraction: float | None = None, seed: int = 0, *, n_starts: int = 50,
             initial_steps: int = 2, n_best: int = 10, max_steps: int = 30, tol: float = 1e-12,
             floor: float = VARIANCE_FLOOR) -> McdResult:
    """Minimum covariance determinant by random (d+1)-subsets and C-steps.

    Each start runs ``initial_steps`` C-steps; the ``n_best`` lowest
    determinants are iterated to convergence and the smallest wins (ties go
    to the earlier start). The returned covariance is the winning subset's
    covariance times the consistency factor, plus ``floor`` on the diagonal.
    Unpacks as ``(location, covariance)``.
    """
    X = _as_points(data)
    n, d = X.shape
    if n < d + 1:
        raise ValueError(f"need at least {d + 1} points, got {n}")
    h = support_size(n, d, support_fraction)
    if h == n:
        support = np.arange(n)
        logdet = kernels.c_steps(X, support, h, 0, tol, floor)[1]
    else:
        if initial_steps < 1:
            raise ValueError("initial_steps must be >= 1")
        rng = np.random.default_rng(seed)
        # row s is start s; any start can be recomputed independently
        starts = np.argpartition(rng.random((n_starts, n)), d, axis=1)[:, :d + 1]
        support, logdet, _ = kernels.mcd_search(X, starts, h, initial_steps, n_best, max_steps,
                                                tol, floor)
    pts = X[support]
    mu = pts.mean(axis=0)
    diff = pts - mu
    cov = diff.T @ diff / h * consistency_factor(h, n, d) + floor * np.eye(d)
    return McdResult(mu, 0.5 * (cov + cov.T), np.asarray(support), float(logdet), h)


def fit_envelope(data, contamination: float = 0.05, support_fraction: float | None = None,
                 seed: int = 0, floor: float = VARIANCE_FLOOR) -> EnvelopeModel:
    """Robust fit plus a threshold at the (1 - contamination) quantile of the
    training distances (linear interpolation)."""
    if not 0 < contamination <= 0.5:
        raise ValueError("contamination must lie in (0, 0.5]")
    X = _as_points(data)
    if len(X) == 0:
        raise ValueError("no data to fit")
    mcd = fast_mcd(X, support_fraction, seed, floor=floor)
    prec = _precision(mcd.covariance)
    dist = distances(X, mcd.location, prec)
    threshold = float(np.quantile(dist, 1.0 - contamination))
    return EnvelopeModel(mcd.location, mcd.covariance, prec, float(contamination), threshold,
                         support_fraction, len(X))


def decide(model: EnvelopeModel, x, threshold: float | None = None) -> bool:
    """True (outlier) iff the distance strictly exceeds the threshold."""
    t = model.threshold if threshold is None else threshold
    return mahalanobis(x, model) > t


class ContaminationTracker:
    """Trailing-window outlier rate, clipped to [c_min, c_max].

    Before any decision is recorded the value is ``initial``.
    """

    def __init__(self, window: int = 168, c_min: float = 0.005, c_max: float = 0.30,
                 initial: float = 0.05):
        if window < 1:
            raise ValueError("window must be >= 1")
        if not 0 < c_min <= c_max <= 0.5:
            raise ValueError("need 0 < c_min <= c_max <= 0.5")
        self.window = window
        self.c_min, self.c_max = c_min, c_max
        self.history: deque[bool] = deque(maxlen=window)
        self.outliers = 0
        self.value = float(initial)

    def rate(self) -> float:
        return self.outliers / len(self.history) if self.history else 0.0

    def update(self, outlier: bool) -> float:
        if len(self.history) == self.window and self.history[0]:
            self.outliers -= 1
        self.history.append(bool(outlier))
        self.outliers += bool(outlier)
        self.value = min(max(self.rate(), self.c_min), self.c_max)
        return self.value


def update_contamination(state: ContaminationTracker, new_decision: bool) -> float:
    return state.update(new_decision)


def save_envelope(path, model: EnvelopeModel, extra: dict | None = None):
    from . import __version__
    from .forecast.artifact import FORMAT_VERSION, write_archive
    meta = {"format": "diadetect-envelope", "format_version": FORMAT_VERSION,
            "version": __version__, "contamination": model.contamination,
            "threshold": model.threshold, "support_fraction": model.support_fraction,
            "n_train": model.n_train, **(extra or {})}
    write_archive(path, {"location": model.location, "covariance": model.covariance}, meta)


def load_envelope(path) -> EnvelopeModel:
    from .forecast.artifact import read_archive
    meta, arrays = read_archive(path, "diadetect-envelope")
    cov = arrays["covariance"]
    return EnvelopeModel(arrays["location"], cov, _precision(cov), meta["contamination"],
                         meta["threshold"], meta["support_fraction"], meta["n_train"])
