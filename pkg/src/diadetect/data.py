"""Hourly load series: CSV ingestion, synthetic generation, splitting and
lookback windowing."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np

HOUR = timedelta(hours=1)
TIMESTAMP_FORMAT = "%Y-%m-%dT%H:%M:%S"
CSV_HEADER = ("timestamp", "load_kw")


class DataError(ValueError):
    """Invalid load data. ``row`` is the 1-based data row (header excluded)."""

    def __init__(self, message: str, row: int | None = None):
        super().__init__(message)
        self.row = row


def format_timestamp(ts: datetime) -> str:
    return ts.strftime(TIMESTAMP_FORMAT)


def parse_timestamp(text: str) -> datetime:
    ts = datetime.fromisoformat(text.strip())
    if ts.tzinfo is not None:
        raise ValueError("timezone-aware timestamps are not supported")
    return ts


@dataclass(frozen=True)
class LoadSeries:
    """Contiguous hourly loads in kW starting at ``start``."""

    start: datetime
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 1:
            raise DataError("load values must be one-dimensional")
        bad = np.flatnonzero(~np.isfinite(values) | (values <= 0))
        if bad.size:
            i = int(bad[0])
            raise DataError(f"non-positive or non-finite load at row {i + 1}", row=i + 1)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return len(self.values)

    @property
    def end(self) -> datetime:
        """Timestamp one hour past the last value."""
        return self.start + len(self) * HOUR

    def timestamp(self, i: int) -> datetime:
        return self.start + i * HOUR

    def timestamps(self) -> list[datetime]:
        return [self.start + i * HOUR for i in range(len(self))]

    def index_of(self, ts: datetime) -> int:
        offset = ts - self.start
        hours, rem = divmod(offset, HOUR)
        if rem:
            raise DataError(f"timestamp {format_timestamp(ts)} is not on the hourly grid")
        return int(hours)

    def slice(self, i: int, j: int) -> LoadSeries:
        return LoadSeries(self.timestamp(i), self.values[i:j])


def load_csv(path: str | Path) -> LoadSeries:
    """Read a ``timestamp,load_kw`` CSV with strictly hourly, gap-free rows.

    Lines starting with ``#`` are ignored; row numbers in errors count data
    rows from 1."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        return parse_load_rows(fh)


def parse_load_rows(fh) -> LoadSeries:
    """Parse an open ``timestamp,load_kw`` text stream (see :func:`load_csv`)."""
    reader = csv.reader(line for line in fh if not line.startswith("#"))
    header = next(reader, None)
    if header is None or tuple(h.strip() for h in header[:2]) != CSV_HEADER:
        raise DataError(f"expected header {','.join(CSV_HEADER)}")
    start = prev = None
    values = []
    for row_no, row in enumerate(reader, start=1):
        if not row:
            continue
        if len(row) < 2:
            raise DataError(f"missing column at row {row_no}", row=row_no)
        try:
            ts = parse_timestamp(row[0])
        except ValueError:
            raise DataError(f"unparseable timestamp at row {row_no}", row=row_no) from None
        try:
            load = float(row[1])
        except ValueError:
            raise DataError(f"non-numeric load at row {row_no}", row=row_no) from None
        if prev is not None:
            if ts <= prev:
                raise DataError(f"non-monotone timestamp at row {row_no}", row=row_no)
            if ts - prev != HOUR:
                raise DataError(f"gap in timestamps at row {row_no}", row=row_no)
        if not math.isfinite(load) or load <= 0:
            raise DataError(f"non-positive load at row {row_no}", row=row_no)
        if start is None:
            start = ts
        prev = ts
        values.append(load)
    if start is None:
        raise DataError("file has no data rows")
    return LoadSeries(start, np.array(values))


def write_csv(series: LoadSeries, path: str | Path, comment: str | None = None) -> None:
    """Write the normalized form read back bit-exactly by :func:`load_csv`,
    optionally preceded by one ``# comment`` line."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        fh.write(",".join(CSV_HEADER) + "\n")
        for ts, v in zip(series.timestamps(), series.values):
            fh.write(f"{format_timestamp(ts)},{float(v)!r}\n")


@dataclass(frozen=True)
class SynthProfile:
    """Seasonality of the synthetic feeder.

    Load = base * (1 + daily) * weekly + noise, with ``daily`` a 24 h sinusoid
    peaking at ``peak_hour`` and ``weekly`` = 1 +/- ``weekly_amplitude`` on
    weekdays/weekends.
    """

    base_kw: float = 3000.0
    daily_amplitude: float = 0.25
    weekly_amplitude: float = 0.10
    noise_fraction: float = 0.01
    peak_hour: float = 15.0
    start: datetime = datetime(2009, 1, 1)


def synth_load(days: int, seed: int, profile: SynthProfile | None = None) -> LoadSeries:
    if days < 2:
        raise ValueError("synth_load needs at least 2 days")
    profile = profile or SynthProfile()
    n = 24 * days
    hours = np.arange(n, dtype=float)
    hour_of_day = (hours + profile.start.hour) % 24
    daily = profile.daily_amplitude * np.cos(2 * np.pi * (hour_of_day - profile.peak_hour) / 24)
    weekday = (profile.start.weekday() + (hours + profile.start.hour) // 24) % 7
    weekly = np.where(weekday < 5, 1 + profile.weekly_amplitude, 1 - profile.weekly_amplitude)
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, profile.noise_fraction * profile.base_kw, n)
    values = profile.base_kw * (1 + daily) * weekly + noise
    if not np.all(values > 0):
        raise ValueError("synthetic profile produced non-positive loads")
    return LoadSeries(profile.start, values)


@dataclass(frozen=True)
class MinMaxScaling:
    """Affine map of loads onto [0, 1]; degenerate ranges map with unit scale."""

    low: float
    high: float

    @classmethod
    def fit(cls, values) -> MinMaxScaling:
        values = np.asarray(values, dtype=float)
        return cls(float(values.min()), float(values.max()))

    @property
    def span(self) -> float:
        span = self.high - self.low
        return span if span > 0 else 1.0

    def scale(self, x):
        return (np.asarray(x, dtype=float) - self.low) / self.span

    def unscale(self, z):
        return np.asarray(z, dtype=float) * self.span + self.low

    def to_dict(self) -> dict:
        return {"kind": "minmax", "low": self.low, "high": self.high}

    @classmethod
    def from_dict(cls, d: dict) -> MinMaxScaling:
        return cls(float(d["low"]), float(d["high"]))


@dataclass(frozen=True)
class WindowedDataset:
    """Supervised pairs: ``inputs[i] = values[i:i+lookback]``, ``targets[i] = values[i+lookback]``."""

    lookback: int
    inputs: np.ndarray
    targets: np.ndarray
    scaling: MinMaxScaling
    scaled_inputs: np.ndarray = field(init=False, repr=False)
    scaled_targets: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "scaled_inputs", self.scaling.scale(self.inputs))
        object.__setattr__(self, "scaled_targets", self.scaling.scale(self.targets))

    def __len__(self) -> int:
        return len(self.targets)


def build_windows(series, lookback: int = 14, scaling: MinMaxScaling | None = None) -> WindowedDataset:
    """Slide a lookback window over ``series``.

    ``scaling`` defaults to min/max of ``series`` itself; pass the training
    scaling when windowing held-out data.
    """
    values = np.asarray(getattr(series, "values", series), dtype=float)
    if lookback < 1:
        raise ValueError("lookback must be >= 1")
    if len(values) <= lookback:
        raise DataError(f"series of length {len(values)} too short for lookback {lookback}")
    inputs = np.lib.stride_tricks.sliding_window_view(values, lookback)[:-1].copy()
    targets = values[lookback:].copy()
    return WindowedDataset(lookback, inputs, targets, scaling or MinMaxScaling.fit(values))


@dataclass(frozen=True)
class SplitSpec:
    """Train covers [series.start, train_end); test covers [train_end, test_end)."""

    train_end: datetime
    test_end: datetime

    @classmethod
    def from_fraction(cls, series: LoadSeries, train_fraction: float) -> SplitSpec:
        if not 0 < train_fraction < 1:
            raise ValueError("train_fraction must lie in (0, 1)")
        cut = int(round(train_fraction * len(series)))
        return cls(series.timestamp(cut), series.end)


def split(series: LoadSeries, spec: SplitSpec) -> tuple[LoadSeries, LoadSeries]:
    if not series.start < spec.train_end < spec.test_end:
        raise DataError("split requires start < train_end < test_end")
    if spec.test_end > series.end:
        raise DataError("test_end lies beyond the series")
    i = series.index_of(spec.train_end)
    j = series.index_of(spec.test_end)
    return series.slice(0, i), series.slice(i, j)
