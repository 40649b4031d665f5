"""Confusion accounting, detection metrics, the attack-scenario suite and the
leading-scenario ranking, with CSV/JSON/text report writers."""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from datetime import datetime
from pathlib import Path

import numpy as np

from .attack import AttackScenario, add_measurement_noise, inject
from .data import LoadSeries
from .detect import DetectorConfig, run_stream, warm_up
from .forecast.forecasters import OracleForecaster
from .forecast.oracle import oracle_forecast
from .seeding import derive_seed

METRICS = ("accuracy", "precision", "sensitivity", "specificity", "f1")


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    tn: int
    fp: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.tn, self.fp, self.fn) < 0:
            raise ValueError("confusion counts must be nonnegative")

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


def confusion(truth, decisions) -> ConfusionMatrix:
    """truth/decisions: True means attacked / flagged as attacked."""
    t = np.asarray(truth, dtype=bool)
    d = np.asarray(decisions, dtype=bool)
    if t.shape != d.shape:
        raise ValueError("truth and decisions differ in length")
    return ConfusionMatrix(int((t & d).sum()), int((~t & ~d).sum()), int((~t & d).sum()),
                           int((t & ~d).sum()))


@dataclass(frozen=True)
class MetricSet:
    """Each metric is a fraction, or None where its denominator is zero."""

    accuracy: float | None
    precision: float | None
    sensitivity: float | None
    specificity: float | None
    f1: float | None

    def undefined(self) -> list[str]:
        return [m for m in METRICS if getattr(self, m) is None]

    def as_dict(self) -> dict:
        return {m: getattr(self, m) for m in METRICS}


def _ratio(num: int, den: int) -> float | None:
    return num / den if den else None


def metrics(cm: ConfusionMatrix) -> MetricSet:
    if cm.total == 0:
        raise ValueError("empty confusion matrix")
    precision = _ratio(cm.tp, cm.tp + cm.fp)
    sensitivity = _ratio(cm.tp, cm.tp + cm.fn)
    if precision is None or sensitivity is None or precision + sensitivity == 0:
        f1 = None
    else:
        f1 = 2 * precision * sensitivity / (precision + sensitivity)
    return MetricSet((cm.tp + cm.tn) / cm.total, precision, sensitivity,
                     _ratio(cm.tn, cm.tn + cm.fp), f1)


def mean_metrics(sets) -> MetricSet:
    """Per-metric arithmetic mean over the sets where the metric is defined."""
    out = {}
    for m in METRICS:
        vals = [getattr(s, m) for s in sets if getattr(s, m) is not None]
        out[m] = math.fsum(vals) / len(vals) if vals else None
    return MetricSet(**out)


@dataclass(frozen=True)
class StreamContext:
    """Clean data shared by every run: a calibration prefix that immediately
    precedes the test stream."""

    calibration: np.ndarray
    test: np.ndarray
    test_start: datetime
    noise_sigma: float = 0.02
    oracle_sigma: float = 0.02
    master_seed: int = 0
    detector_config: DetectorConfig = DetectorConfig()


@dataclass(frozen=True)
class DetectorSpec:
    """``forecaster`` is None for the oracle detector."""

    tag: str
    forecaster: object = None


@dataclass(frozen=True)
class RunRecord:
    detector: str
    scenario_id: int
    k: int
    p: int
    repetition: int
    confusion: ConfusionMatrix
    metrics: MetricSet
    sound: bool
    substitutions: int
    refits: int


@dataclass
class ScenarioResult:
    detector: str
    scenario: AttackScenario
    repetitions: list[MetricSet]
    confusions: list[ConfusionMatrix]
    mean: MetricSet
    sound: bool

    @property
    def scenario_id(self) -> int:
        return self.scenario.scenario_id


def run_seeds(master: int, scenario: AttackScenario, rep: int) -> dict:
    """Seeds for one run. The attack mask and oracle errors depend on
    (k, repetition) and the noise on the repetition only, so scenarios that
    differ only in intensity share positions and noise, and every detector
    sees the same attacked stream."""
    k = scenario.k
    return {"attack": derive_seed(master, "attack", k, rep),
            "noise": derive_seed(master, "noise", rep),
            "noise_ref": derive_seed(master, "noise-ref", rep),
            "oracle": derive_seed(master, "oracle", k, rep),
            "oracle_ref": derive_seed(master, "oracle-ref", rep),
            "envelope": derive_seed(master, "envelope", rep)}


def run_once(ctx: StreamContext, spec: DetectorSpec, scenario: AttackScenario,
             rep: int) -> tuple[RunRecord, object]:
    seeds = run_seeds(ctx.master_seed, scenario, rep)
    test = LoadSeries(ctx.test_start, ctx.test)
    attacked = inject(test, scenario.with_seed(seeds["attack"]))
    received = add_measurement_noise(attacked, ctx.noise_sigma, seeds["noise"])
    prefix = add_measurement_noise(ctx.calibration, ctx.noise_sigma, seeds["noise_ref"])
    if spec.forecaster is None:
        # the oracle forecasts the load actually consumed: the noisy
        # measurement where untouched, the pre-attack value where attacked
        actual = np.where(attacked.labels, attacked.clean, received.values)
        preds = np.concatenate([oracle_forecast(prefix, ctx.oracle_sigma, seeds["oracle_ref"]),
                                oracle_forecast(actual, ctx.oracle_sigma, seeds["oracle"])])
        forecaster = OracleForecaster(preds, ctx.oracle_sigma, seeds["oracle"])
    else:
        forecaster = spec.forecaster
    cfg = ctx.detector_config
    cfg = DetectorConfig(**{**asdict(cfg), "seed": seeds["envelope"]})
    state = warm_up(forecaster, prefix, cfg)
    stream = run_stream(state, received)
    flags = stream.decisions
    passed = stream.passed
    sound = not np.any(np.isin(passed, stream.received[flags]))
    cm = confusion(attacked.labels, flags)
    rec = RunRecord(spec.tag, scenario.scenario_id, scenario.k, scenario.p, rep, cm, metrics(cm),
                    bool(sound), len(state.substitution_log), state.n_refits)
    return rec, stream


_WORKER = {}


def _init_worker(ctx, specs):
    _WORKER["ctx"] = ctx
    _WORKER["specs"] = specs


def _run_task(task):
    d, scenario, rep = task
    return run_once(_WORKER["ctx"], _WORKER["specs"][d], scenario, rep)[0]


@dataclass
class SuiteResult:
    records: list[RunRecord]
    results: list[ScenarioResult]
    detectors: list[str]
    scenarios: list[AttackScenario]
    repetitions: int

    @property
    def sound(self) -> bool:
        return all(r.sound for r in self.records)


def run_suite(ctx: StreamContext, detectors: list[DetectorSpec], scenarios, repetitions: int = 3,
              jobs: int = 1) -> SuiteResult:
    """Every (detector, scenario, repetition) run, aggregated per
    (detector, scenario). Results do not depend on execution order or jobs."""
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    if not detectors or not scenarios:
        raise ValueError("need at least one detector and one scenario")
    tasks = [(d, sc, rep) for d in range(len(detectors)) for sc in scenarios
             for rep in range(repetitions)]
    if jobs > 1:
        with ProcessPoolExecutor(jobs, initializer=_init_worker,
                                 initargs=(ctx, detectors)) as pool:
            records = list(pool.map(_run_task, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))
    else:
        _init_worker(ctx, detectors)
        records = [_run_task(t) for t in tasks]
    results = []
    it = iter(records)
    for spec in detectors:
        for sc in scenarios:
            recs = [next(it) for _ in range(repetitions)]
            sets = [r.metrics for r in recs]
            results.append(ScenarioResult(spec.tag, sc, sets, [r.confusion for r in recs],
                                          mean_metrics(sets), all(r.sound for r in recs)))
    return SuiteResult(records, results, [d.tag for d in detectors], list(scenarios),
                       repetitions)


@dataclass(frozen=True)
class RankRow:
    detector: str
    leading: int
    rank: int


def leaders(results: list[ScenarioResult]) -> dict[int, list[str]]:
    """Per scenario, the detectors with the highest mean f1 (all of them on
    a tie). Scenarios where no f1 is defined have no leader."""
    by_sid: dict[int, list[ScenarioResult]] = {}
    for r in results:
        by_sid.setdefault(r.scenario_id, []).append(r)
    out = {}
    for sid, rows in sorted(by_sid.items()):
        scored = [r for r in rows if r.mean.f1 is not None]
        if not scored:
            out[sid] = []
            continue
        top = max(r.mean.f1 for r in scored)
        out[sid] = [r.detector for r in scored if r.mean.f1 == top]
    return out


def rank(results: list[ScenarioResult]) -> list[RankRow]:
    """Leading-scenario counts, descending; equal counts share a rank."""
    if not results:
        raise ValueError("no results to rank")
    detectors = list(dict.fromkeys(r.detector for r in results))
    counts = {d: 0 for d in detectors}
    for tags in leaders(results).values():
        for t in tags:
            counts[t] += 1
    order = sorted(detectors, key=lambda d: (-counts[d], detectors.index(d)))
    return [RankRow(d, counts[d], 1 + sum(c > counts[d] for c in counts.values())) for d in order]


# ---- reports ----------------------------------------------------------------

def _num(v) -> str:
    return "" if v is None else repr(float(v))


def _pct(v) -> str:
    return "n/a" if v is None else f"{100 * v:.2f}%"


def _write_csv(path: Path, header_line: str, columns, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# {header_line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        w.writerows(rows)


def _family_rows(suite: SuiteResult, family: str):
    rows = []
    for r in suite.results:
        if r.scenario.family != family:
            continue
        rows.append([r.scenario_id, r.scenario.k, r.scenario.p, r.detector,
                     *(_num(getattr(r.mean, m)) for m in METRICS),
                     ";".join(r.mean.undefined())])
    rows.sort(key=lambda row: (row[0], suite.detectors.index(row[3])))
    return rows


def _text_table(suite: SuiteResult, family: str, title: str) -> list[str]:
    dets = suite.detectors
    cols = ("accuracy", "specificity", "f1")
    head = ["scenario", "k", "p"] + [f"{d} {c}" for d in dets for c in cols]
    by = {(r.detector, r.scenario_id): r for r in suite.results}
    body = []
    for sc in sorted(suite.scenarios, key=lambda s: s.scenario_id):
        if sc.family != family:
            continue
        row = [str(sc.scenario_id), str(sc.k), f"{sc.p:+d}"]
        for d in dets:
            m = by[(d, sc.scenario_id)].mean
            row += [_pct(getattr(m, c)) for c in cols]
        body.append(row)
    if not body:
        return []
    widths = [max(len(x) for x in col) for col in zip(head, *body)]
    fmt = "  ".join(f"{{:>{w}}}" for w in widths)
    lines = [title, fmt.format(*head)]
    lines += [fmt.format(*row) for row in body]
    return lines + [""]


def suite_document(suite: SuiteResult, header: dict) -> dict:
    ranking = rank(suite.results)
    return {
        **header,
        "repetitions": suite.repetitions,
        "detectors": suite.detectors,
        "sound": suite.sound,
        "runs": [{"detector": r.detector, "scenario_id": r.scenario_id, "k": r.k, "p": r.p,
                  "repetition": r.repetition, "confusion": asdict(r.confusion),
                  "metrics": r.metrics.as_dict(), "sound": r.sound,
                  "substitutions": r.substitutions, "refits": r.refits}
                 for r in suite.records],
        "scenarios": [{"detector": r.detector, "scenario_id": r.scenario_id,
                       "k": r.scenario.k, "p": r.scenario.p, "family": r.scenario.family,
                       "mean": r.mean.as_dict(), "undefined": r.mean.undefined()}
                      for r in suite.results],
        "leaders": {str(k): v for k, v in leaders(suite.results).items()},
        "ranking": [asdict(r) for r in ranking],
    }


def write_reports(suite: SuiteResult, outdir, header: dict) -> list[Path]:
    """Write blackout.csv, economic.csv, ranking.csv, plot_metrics.csv,
    results.json and tables.txt. ``header`` must hold ``version`` and
    ``config_hash``; it is embedded in every file."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    tag = f"diadetect {header['version']} config=sha256:{header['config_hash']}"
    cols = ["scenario_id", "k", "p", "detector", *METRICS, "undefined"]
    written = []
    for family in ("blackout", "economic"):
        path = outdir / f"{family}.csv"
        _write_csv(path, tag, cols, _family_rows(suite, family))
        written.append(path)
    ranking = rank(suite.results)
    path = outdir / "ranking.csv"
    _write_csv(path, tag, ["rank", "detector", "leading_scenarios"],
               [[r.rank, r.detector, r.leading] for r in ranking])
    written.append(path)
    path = outdir / "plot_metrics.csv"
    rows = [[r.scenario_id, r.detector, m, _num(getattr(r.mean, m))]
            for r in sorted(suite.results, key=lambda r: (r.scenario_id,
                                                          suite.detectors.index(r.detector)))
            for m in METRICS]
    _write_csv(path, tag, ["scenario_id", "detector", "metric", "value"], rows)
    written.append(path)
    path = outdir / "results.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(suite_document(suite, header), fh, sort_keys=True, indent=1)
        fh.write("\n")
    written.append(path)
    lines = [f"# {tag}", ""]
    lines += _text_table(suite, "blackout", "Attacks decreasing load (blackout-targeting)")
    lines += _text_table(suite, "economic", "Attacks increasing load (economic-loss-targeting)")
    lines += ["Leading scenarios (highest mean f1, ties shared)",
              *(f"{r.rank:>4}  {r.detector:<12} {r.leading}" for r in ranking), ""]
    path = outdir / "tables.txt"
    path.write_text("\n".join(lines), encoding="utf-8")
    written.append(path)
    return written
