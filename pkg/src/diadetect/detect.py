"""Online detection loop.

Each hour: forecast the load from the rolling window of values passed
downstream, turn the received value into a relative residual, classify it
with the elliptic envelope, and either accept it (inlier) or replace it with
the forecast (outlier). The outlier rate over the last ``window`` hours sets
the contamination, and the envelope is refit on the last ``window``
residuals every ``refit_every`` accepted points or when the contamination
drifts by more than ``refit_tolerance``.

The decision threshold never drops below the ``1 - c_min`` quantile of the
clean warm-up residuals' distances under the current fit. Without that
anchor a burst of attacked residuals inflates the outlier rate, the rate
lowers the quantile, and the lower quantile flags more legitimate points.
"""

from __future__ import annotations

import csv
import json
import math
from collections import deque
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import format_timestamp, HOUR
from .robust import ContaminationTracker, EnvelopeModel, distances, fit_envelope

INLIER = "inlier"
OUTLIER = "outlier"


class DetectorError(RuntimeError):
    pass


def process_residual(y_t: float, y_pred_t: float) -> float:
    """|y - y_pred| / y_pred."""
    if not y_pred_t > 0:
        raise DetectorError(f"non-positive forecast {y_pred_t!r}")
    return abs(y_t - y_pred_t) / y_pred_t


@dataclass(frozen=True)
class DetectorConfig:
    contamination: float = 0.05
    c_min: float = 0.0005
    c_max: float = 0.5
    window: int = 168
    refit_every: int = 24
    refit_tolerance: float = 0.01
    support_fraction: float | None = None
    min_warmup: int = 168
    feature_dim: int = 1
    anchor: bool = True
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.c_min <= self.contamination <= self.c_max <= 0.5:
            raise ValueError("need 0 < c_min <= contamination <= c_max <= 0.5")
        if self.window < 2 or self.refit_every < 1 or self.feature_dim < 1:
            raise ValueError("window >= 2, refit_every >= 1 and feature_dim >= 1 required")


@dataclass(frozen=True)
class StepOutcome:
    t: int
    received: float
    forecast: float
    processed: float
    decision: str
    passed: float
    distance: float
    threshold: float

    @property
    def outlier(self) -> bool:
        return self.decision == OUTLIER


@dataclass(frozen=True)
class Substitution:
    t: int
    received: float
    forecast: float


@dataclass
class DetectorState:
    forecaster: object
    config: DetectorConfig
    envelope: EnvelopeModel | None = None
    threshold: float = math.inf
    floor_threshold: float = 0.0
    reference: np.ndarray | None = None
    t: int = 0
    rolling: deque = field(default_factory=deque)
    recent: deque = field(default_factory=deque)
    window_features: deque = field(default_factory=deque)
    tracker: ContaminationTracker | None = None
    contamination_at_fit: float = 0.0
    accepted_since_fit: int = 0
    n_refits: int = 0
    legitimate_history: list = field(default_factory=list)
    legitimate_loads: list = field(default_factory=list)
    substitution_log: list = field(default_factory=list)

    @property
    def warmed_up(self) -> bool:
        return self.envelope is not None

    @property
    def contamination(self) -> float:
        return self.tracker.value


def _stack(residuals: np.ndarray, d: int) -> np.ndarray:
    if d == 1:
        return residuals[:, None]
    return np.lib.stride_tricks.sliding_window_view(residuals, d).copy()


def _refit(state: DetectorState, contamination: float):
    cfg = state.config
    env = fit_envelope(np.array(state.window_features), contamination, cfg.support_fraction,
                       cfg.seed)
    state.envelope = env
    state.threshold = env.threshold
    if cfg.anchor:
        ref = distances(state.reference, env.location, env.precision)
        state.floor_threshold = float(np.quantile(ref, 1.0 - cfg.c_min))
        state.threshold = max(env.threshold, state.floor_threshold)
    state.contamination_at_fit = contamination
    state.accepted_since_fit = 0
    state.n_refits += 1


def warm_up(forecaster, prefix, config: DetectorConfig = DetectorConfig(),
            t0: int = 0) -> DetectorState:
    """Fit the initial envelope on a clean stream prefix.

    The prefix is forecast in one pass; every residual becomes part of the
    clean reference and of the legitimate history, the last ``window`` of
    them train the envelope at ``config.contamination``. ``t0`` is the
    stream index of ``prefix[0]``; streaming continues at ``t0 + len(prefix)``.
    """
    values = np.asarray(getattr(prefix, "values", prefix), dtype=float)
    if len(values) < config.min_warmup:
        raise DetectorError(f"warm-up prefix of {len(values)} points is shorter than "
                            f"{config.min_warmup}")
    lb = forecaster.lookback
    preds = forecaster.forecast_series(values, t0)
    actual = values[lb:]
    if np.any(preds <= 0):
        raise DetectorError("non-positive forecast in warm-up")
    resid = np.abs(actual - preds) / preds
    d = config.feature_dim
    feats = _stack(resid, d)
    if len(feats) < d + 1:
        raise DetectorError("warm-up prefix too short for the feature dimension")
    W = config.window
    state = DetectorState(forecaster, config)
    state.reference = feats
    state.t = t0 + len(values)
    state.rolling = deque(values[len(values) - lb:].tolist(), maxlen=max(lb, 1))
    state.recent = deque(resid[len(resid) - (d - 1):].tolist() if d > 1 else [], maxlen=max(d - 1, 1))
    state.window_features = deque([row for row in feats[-W:]], maxlen=W)
    state.tracker = ContaminationTracker(W, config.c_min, config.c_max, config.contamination)
    for _ in range(min(W, len(feats))):
        state.tracker.update(False)
    state.tracker.value = config.contamination
    state.legitimate_history = resid.tolist()
    state.legitimate_loads = actual.tolist()
    _refit(state, config.contamination)
    return state


def detect_step(state: DetectorState, y_t: float) -> StepOutcome:
    if not state.warmed_up:
        raise DetectorError("detector is not warmed up")
    cfg = state.config
    t = state.t
    window = np.fromiter(state.rolling, float, len(state.rolling)) if state.forecaster.lookback else None
    pred = state.forecaster.predict_next(window, t)
    r = process_residual(y_t, pred)
    env = state.envelope
    if cfg.feature_dim == 1:
        x = np.array([r])
        dist = abs(r - env.location[0]) * math.sqrt(env.precision[0, 0])
    else:
        x = np.array([*state.recent, r])
        diff = x - env.location
        dist = math.sqrt(max(float(diff @ env.precision @ diff), 0.0))
        state.recent.append(r)
    threshold = state.threshold
    outlier = dist > threshold
    if outlier:
        passed = pred
        state.substitution_log.append(Substitution(t, float(y_t), pred))
    else:
        passed = float(y_t)
        state.legitimate_history.append(r)
        state.legitimate_loads.append(float(y_t))
        state.accepted_since_fit += 1
    if state.forecaster.lookback:
        state.rolling.append(passed)
    state.window_features.append(x)
    c = state.tracker.update(outlier)
    if (state.accepted_since_fit >= cfg.refit_every
            or abs(c - state.contamination_at_fit) > cfg.refit_tolerance):
        _refit(state, c)
    state.t = t + 1
    return StepOutcome(t, float(y_t), pred, r, OUTLIER if outlier else INLIER, passed, dist,
                       threshold)


@dataclass
class StreamResult:
    outcomes: list[StepOutcome]
    labels: np.ndarray | None

    @property
    def decisions(self) -> np.ndarray:
        return np.array([o.outlier for o in self.outcomes], dtype=bool)

    @property
    def passed(self) -> np.ndarray:
        return np.array([o.passed for o in self.outcomes])

    @property
    def received(self) -> np.ndarray:
        return np.array([o.received for o in self.outcomes])


def run_stream(state: DetectorState, stream, labels=None) -> StreamResult:
    """Apply detect_step to every value of ``stream`` (array, LoadSeries or
    LabeledSeries); labels default to the LabeledSeries ground truth."""
    if labels is None:
        labels = getattr(stream, "labels", None)
    values = np.asarray(getattr(stream, "values", stream), dtype=float)
    outcomes = [detect_step(state, float(v)) for v in values]
    return StreamResult(outcomes, None if labels is None else np.asarray(labels, dtype=bool))


OUTCOME_FIELDS = ("timestamp", "received", "forecast", "processed", "decision", "passed")


def _stamp(o: StepOutcome, start, t0: int) -> str:
    if start is None:
        return str(o.t)
    return format_timestamp(start + (o.t - t0) * HOUR)


def write_outcomes_csv(outcomes, path, start=None, t0: int = 0, header_comment: str | None = None):
    """``start`` is the timestamp of stream index ``t0``; without it the
    timestamp column holds stream indices."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(OUTCOME_FIELDS)
        for o in outcomes:
            w.writerow([_stamp(o, start, t0), repr(o.received), repr(o.forecast),
                        repr(o.processed), o.decision, repr(o.passed)])


def write_outcomes_jsonl(outcomes, path, start=None, t0: int = 0):
    with open(path, "w", encoding="utf-8") as fh:
        for o in outcomes:
            rec = asdict(o)
            rec["timestamp"] = _stamp(o, start, t0)
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
