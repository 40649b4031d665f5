"""Data-integrity attacks on load series and multiplicative measurement noise."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .data import DataError, LoadSeries, format_timestamp, parse_load_rows

DISPERSIONS = (10, 20, 30)
INTENSITIES = (10, 20, 30, 40, 50)


@dataclass(frozen=True)
class AttackScenario:
    """Attack ``k`` percent of the points, scaling each by ``1 + p/100``."""

    k: int
    p: int
    scenario_id: int
    seed: int = 0

    @property
    def family(self) -> str:
        return "blackout" if self.p < 0 else "economic"

    def with_seed(self, seed: int) -> AttackScenario:
        return replace(self, seed=int(seed))


def scenario_id(k: int, p: int) -> int:
    if k not in DISPERSIONS or abs(p) not in INTENSITIES:
        raise ValueError(f"(k={k}, p={p}) is not on the scenario grid")
    base = 0 if p < 0 else 15
    return base + 5 * DISPERSIONS.index(k) + INTENSITIES.index(abs(p)) + 1


def scenario_grid(seed: int = 0) -> list[AttackScenario]:
    """The 30 scenarios ordered by id: 1-15 decrease load, 16-30 increase it;
    within each half, rows of k = 10, 20, 30 by |p| = 10..50."""
    out = []
    for sign in (-1, 1):
        for k in DISPERSIONS:
            for p in INTENSITIES:
                out.append(AttackScenario(k, sign * p, scenario_id(k, sign * p), seed))
    return out


def scenario_by_id(sid: int, seed: int = 0) -> AttackScenario:
    if not 1 <= sid <= 30:
        raise ValueError(f"scenario id {sid} outside 1-30")
    return scenario_grid(seed)[sid - 1]


@dataclass(frozen=True)
class LabeledSeries:
    start: object
    values: np.ndarray
    labels: np.ndarray
    clean: np.ndarray

    def __len__(self) -> int:
        return len(self.values)

    @property
    def n_attacked(self) -> int:
        return int(self.labels.sum())

    def series(self) -> LoadSeries:
        return LoadSeries(self.start, self.values)

    def with_values(self, values) -> LabeledSeries:
        return replace(self, values=np.asarray(values, dtype=float))


def attack_count(n: int, k: float) -> int:
    return int(round(k / 100.0 * n))


def inject(series: LoadSeries, scenario: AttackScenario) -> LabeledSeries:
    """Scale exactly round(k% of n) points, chosen uniformly without
    replacement under ``scenario.seed``, by ``1 + p/100``."""
    clean = np.asarray(series.values, dtype=float)
    n = len(clean)
    if n == 0:
        raise ValueError("empty series")
    m = attack_count(n, scenario.k)
    if m == 0:
        raise ValueError("scenario degenerate for series length")
    idx = np.random.default_rng(scenario.seed).choice(n, size=m, replace=False)
    labels = np.zeros(n, dtype=bool)
    labels[idx] = True
    values = clean.copy()
    values[labels] = clean[labels] * (1.0 + scenario.p / 100.0)
    return LabeledSeries(series.start, values, labels, clean.copy())


def add_measurement_noise(series, sigma: float, seed: int, exclude=None):
    """Multiply every non-excluded point by (1 + eta), eta ~ N(0, sigma).

    One draw is made per index whether or not it is excluded, so the noise at
    a given index does not depend on the mask. Accepts a LoadSeries, a
    LabeledSeries (labels are excluded by default) or a plain array.
    """
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if isinstance(series, LabeledSeries) and exclude is None:
        exclude = series.labels
    values = np.asarray(getattr(series, "values", series), dtype=float)
    eta = np.random.default_rng(seed).normal(0.0, 1.0, size=len(values)) * sigma
    keep = np.ones(len(values), dtype=bool) if exclude is None else ~np.asarray(exclude, bool)
    out = values.copy()
    out[keep] = values[keep] * (1.0 + eta[keep])
    if isinstance(series, LabeledSeries):
        return series.with_values(out)
    if isinstance(series, LoadSeries):
        return LoadSeries(series.start, out)
    return out


def write_labeled_csv(ls: LabeledSeries, path, comment: str | None = None):
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp", "load_kw", "label"])
        for ts, v, lab in zip(ls.series().timestamps(), ls.values, ls.labels):
            w.writerow([format_timestamp(ts), repr(float(v)), int(lab)])


def load_labeled_csv(path) -> tuple[LoadSeries, np.ndarray]:
    """Read ``timestamp,load_kw,label`` rows; returns the series and labels."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such file: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(line for line in fh if not line.startswith("#")))
    if not rows or [h.strip() for h in rows[0][:3]] != ["timestamp", "load_kw", "label"]:
        raise DataError("expected header timestamp,load_kw,label")
    labels = []
    for row_no, row in enumerate(rows[1:], start=1):
        if len(row) < 3 or row[2].strip() not in ("0", "1"):
            raise DataError(f"bad label at row {row_no}", row=row_no)
        labels.append(row[2].strip() == "1")
    # reuse the load validation on the first two columns
    buf = io.StringIO("\n".join(",".join(r[:2]) for r in rows) + "\n")
    series = parse_load_rows(buf)
    return series, np.array(labels, dtype=bool)
