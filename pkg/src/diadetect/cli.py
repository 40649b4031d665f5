"""Command-line interface.

Every subcommand reads an optional JSON config (``--config``); flags given on
the command line override config keys. Outputs embed the package version
and the SHA-256 of the canonical config so a report can be traced to the
settings that produced it.

Exit codes: 0 success, 1 usage/config error, 2 data error (bad or missing
input file or artifact), 3 runtime/numeric error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .attack import (add_measurement_noise, inject, load_labeled_csv, scenario_by_id,
                     write_labeled_csv)
from .data import DataError, LoadSeries, load_csv, synth_load, write_csv
from .detect import DetectorConfig, DetectorError, run_stream, warm_up, write_outcomes_csv, \
    write_outcomes_jsonl
from .evaluation import (DetectorSpec, StreamContext, confusion, metrics, run_seeds, run_suite,
                         write_reports)
from .forecast.artifact import load_forecaster, save_forecaster
from .forecast.etr import EtrParams
from .forecast.forecasters import OracleForecaster, train_forecaster
from .forecast.metrics import ForecastReport
from .forecast.oracle import oracle_forecast
from .forecast.recurrent import TrainConfig, TrainingDiverged
from .seeding import derive_seed

log = logging.getLogger("diadetect")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3

DETECTORS = {"ee-oracle": None, "ee-etr": "etr", "ee-lstm": "lstm", "ee-bilstm": "bilstm"}
TAGS = {"ee-oracle": "EE-Oracle", "ee-etr": "EE-ETR", "ee-lstm": "EE-LSTM",
        "ee-bilstm": "EE-BiLSTM"}


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    """All settings of a run. ``output`` and ``jobs`` do not affect results
    and are left out of the config hash."""

    data_csv: str | None = None
    synth_days: int = 540
    synth_seed: int = 1
    train_fraction: float = 0.8
    calibration_hours: int = 2160
    model: str = "etr"
    lookback: int = 14
    n_trees: int = 100
    max_features: int = 5
    n_min: int = 2
    epochs: int = 150
    hidden: list = field(default_factory=lambda: [32, 32])
    dropout: float = 0.3
    batch_size: int = 32
    learning_rate: float = 1e-3
    contamination: float = 0.05
    c_min: float = 0.0005
    c_max: float = 0.5
    window: int = 168
    refit_every: int = 24
    refit_tolerance: float = 0.01
    support_fraction: float | None = None
    feature_dim: int = 1
    detectors: list = field(default_factory=lambda: ["ee-oracle"])
    artifacts: dict = field(default_factory=dict)
    scenarios: str | list = "all"
    repetitions: int = 3
    noise_sigma: float = 0.02
    oracle_sigma: float = 0.02
    stream_length: int | None = 2000
    seed: int = 0
    output: str = "out"
    jobs: int = 1

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> RunConfig:
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> RunConfig:
        path = Path(path)
        if not path.is_file():
            raise DataError(f"no such config file: {path}")
        try:
            d = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise UsageError(f"config {path} is not valid JSON: {exc}") from None
        return cls.from_dict(d)

    def dump(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n",
                              encoding="utf-8")

    def hash(self) -> str:
        d = {k: v for k, v in self.to_dict().items() if k not in ("output", "jobs")}
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    def header(self) -> dict:
        return {"version": __version__, "config_hash": self.hash()}

    def banner(self) -> str:
        return f"diadetect {__version__} config=sha256:{self.hash()}"

    def validate(self):
        if self.synth_days < 2:
            raise UsageError("--days must be >= 2")
        if not 0 < self.train_fraction < 1:
            raise UsageError("train fraction must lie in (0, 1)")
        if self.model not in ("etr", "lstm", "bilstm"):
            raise UsageError(f"unknown model {self.model!r}")
        if self.repetitions < 1:
            raise UsageError("--reps must be >= 1")
        if self.epochs < 1:
            raise UsageError("--epochs must be >= 1")
        for d in self.detectors:
            if d not in DETECTORS:
                raise UsageError(f"unknown detector {d!r}")
        if self.stream_length is not None and self.stream_length < 1:
            raise UsageError("stream length must be >= 1")
        if self.calibration_hours < self.window:
            raise UsageError("calibration hours must cover at least one envelope window")
        self.scenario_ids()
        try:
            self.detector_config()
        except ValueError as exc:
            raise UsageError(str(exc)) from None

    def scenario_ids(self) -> list[int]:
        sel = self.scenarios
        if sel == "all" or sel == ["all"]:
            return list(range(1, 31))
        if isinstance(sel, str):
            sel = sel.split(",")
        try:
            ids = [int(s) for s in sel]
        except (TypeError, ValueError):
            raise UsageError(f"bad scenario selection {self.scenarios!r}") from None
        if not ids or any(not 1 <= i <= 30 for i in ids):
            raise UsageError("scenario ids must lie in 1-30")
        return sorted(set(ids))

    def detector_config(self) -> DetectorConfig:
        return DetectorConfig(self.contamination, self.c_min, self.c_max, self.window,
                              self.refit_every, self.refit_tolerance, self.support_fraction,
                              self.window, self.feature_dim)

    def etr_params(self) -> EtrParams:
        return EtrParams(self.n_trees, self.max_features, self.n_min)

    def train_config(self) -> TrainConfig:
        return TrainConfig(epochs=self.epochs, learning_rate=self.learning_rate,
                           dropout=self.dropout, hidden=tuple(self.hidden),
                           batch_size=self.batch_size, seed=self.seed)


@dataclass(frozen=True)
class Segments:
    """Index layout of the series: model training ends where the
    calibration segment starts; the test stream follows calibration."""

    series: LoadSeries
    train_end: int
    calibration_start: int
    test_end: int

    @property
    def fit_values(self) -> np.ndarray:
        return self.series.values[:self.calibration_start]

    @property
    def calibration(self) -> np.ndarray:
        return self.series.values[self.calibration_start:self.train_end]

    @property
    def test(self) -> LoadSeries:
        return self.series.slice(self.train_end, self.test_end)


def load_series(cfg: RunConfig) -> LoadSeries:
    if cfg.data_csv:
        return load_csv(cfg.data_csv)
    return synth_load(cfg.synth_days, cfg.synth_seed)


def segments(cfg: RunConfig, series: LoadSeries | None = None) -> Segments:
    series = series or load_series(cfg)
    n = len(series)
    train_end = int(round(cfg.train_fraction * n))
    cal = train_end - cfg.calibration_hours
    if cal <= cfg.lookback + 1:
        raise DataError(f"series of {n} hours too short: training portion {train_end} h does "
                        f"not exceed the {cfg.calibration_hours} h calibration segment")
    test_end = n if cfg.stream_length is None else min(n, train_end + cfg.stream_length)
    if test_end <= train_end:
        raise DataError("empty test segment")
    return Segments(series, train_end, cal, test_end)


# ---- subcommands ------------------------------------------------------------

def cmd_synth(cfg: RunConfig, args) -> int:
    series = synth_load(cfg.synth_days, cfg.synth_seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_csv(series, out, comment=cfg.banner())
    v = series.values
    print(json.dumps({"rows": len(v), "mean_kw": float(v.mean()), "min_kw": float(v.min()),
                      "max_kw": float(v.max()), "path": str(out), **cfg.header()},
                     sort_keys=True))
    return EXIT_OK


def _test_report(fc, seg: Segments) -> ForecastReport:
    """Accuracy over the whole test split (not truncated to the stream length)."""
    values = seg.series.values
    lb = fc.lookback
    context = values[seg.train_end - lb:]
    return ForecastReport.from_predictions(values[seg.train_end:],
                                           fc.forecast_series(context, seg.train_end - lb))


def cmd_train(cfg: RunConfig, args) -> int:
    seg = segments(cfg)

    def progress(epoch, loss):
        log.info("epoch %d loss %.6g", epoch + 1, loss)

    fc, info = train_forecaster(seg.fit_values, cfg.model, cfg.lookback, cfg.etr_params(),
                                cfg.train_config(), seed=cfg.seed, jobs=cfg.jobs,
                                log=progress)
    out = Path(args.out or Path(cfg.output) / f"{cfg.model}.npz")
    save_forecaster(out, fc, {"config_hash": cfg.hash(), "calibration_hours":
                              cfg.calibration_hours, "training": info})
    report = _test_report(fc, seg)
    summary = {"model": cfg.model, "artifact": str(out), **report.summary(), **cfg.header()}
    if "loss_curve" in info:
        summary["loss_curve"] = info["loss_curve"]
    Path(str(out) + ".report.json").write_text(json.dumps(summary, sort_keys=True, indent=1)
                                               + "\n", encoding="utf-8")
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def _load_artifact(path):
    try:
        return load_forecaster(path)
    except FileNotFoundError as exc:
        raise DataError(str(exc)) from None
    except (KeyError, ValueError) as exc:
        raise DataError(f"unreadable artifact {path}: {exc}") from None


def cmd_forecast(cfg: RunConfig, args) -> int:
    seg = segments(cfg)
    fc = _load_artifact(args.model_path)
    report = _test_report(fc, seg)
    out = Path(args.out or Path(cfg.output) / "forecast.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as fh:
        fh.write(f"# {cfg.banner()}\n")
        fh.write("timestamp,actual,forecast\n")
        test = seg.series.slice(seg.train_end, len(seg.series))
        for ts, a, p in zip(test.timestamps(), report.actual, report.predictions):
            fh.write(f"{ts.strftime('%Y-%m-%dT%H:%M:%S')},{float(a)!r},{float(p)!r}\n")
    print(json.dumps({"path": str(out), **report.summary(), **cfg.header()}, sort_keys=True))
    return EXIT_OK


def _attacked_stream(cfg: RunConfig, seg: Segments, sid: int, rep: int):
    scenario = scenario_by_id(sid)
    seeds = run_seeds(cfg.seed, scenario, rep)
    attacked = inject(seg.test, scenario.with_seed(seeds["attack"]))
    return scenario, seeds, attacked, add_measurement_noise(attacked, cfg.noise_sigma,
                                                            seeds["noise"])


def cmd_attack(cfg: RunConfig, args) -> int:
    seg = segments(cfg)
    scenario, _, attacked, received = _attacked_stream(cfg, seg, args.scenario, args.rep)
    out = Path(args.out or Path(cfg.output) / f"attack_s{scenario.scenario_id}_r{args.rep}.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    write_labeled_csv(received, out, comment=cfg.banner())
    print(json.dumps({"path": str(out), "scenario_id": scenario.scenario_id, "k": scenario.k,
                      "p": scenario.p, "attacked": attacked.n_attacked, "rows": len(attacked),
                      **cfg.header()}, sort_keys=True))
    return EXIT_OK


def cmd_detect(cfg: RunConfig, args) -> int:
    seg = segments(cfg)
    stream, labels = load_labeled_csv(args.stream)
    if stream.start != seg.test.start:
        raise DataError("stream must start where the configured test segment starts")
    if len(stream) > seg.test_end - seg.train_end:
        raise DataError("stream is longer than the configured test segment")
    prefix = add_measurement_noise(seg.calibration, cfg.noise_sigma,
                                   derive_seed(cfg.seed, "noise-ref", args.rep))
    if args.model_path:
        fc = _load_artifact(args.model_path)
    else:
        # oracle: the consumed load is the received value where unlabeled and
        # the clean test value where labeled attacked
        clean = seg.test.values[:len(stream)]
        actual = np.where(labels, clean, stream.values)
        fc = OracleForecaster(np.concatenate([
            oracle_forecast(prefix, cfg.oracle_sigma, derive_seed(cfg.seed, "oracle-ref", args.rep)),
            oracle_forecast(actual, cfg.oracle_sigma, derive_seed(cfg.seed, "oracle", args.rep))]))
    state = warm_up(fc, prefix, cfg.detector_config())
    result = run_stream(state, stream.values, labels)
    outdir = Path(args.out or cfg.output)
    outdir.mkdir(parents=True, exist_ok=True)
    write_outcomes_csv(result.outcomes, outdir / "outcomes.csv", start=stream.start,
                       t0=state.t - len(stream), header_comment=cfg.banner())
    write_outcomes_jsonl(result.outcomes, outdir / "outcomes.jsonl", start=stream.start,
                         t0=state.t - len(stream))
    cm = confusion(labels, result.decisions)
    summary = {"outcomes": len(result.outcomes), "flagged": int(result.decisions.sum()),
               "confusion": asdict(cm), "metrics": metrics(cm).as_dict(), **cfg.header()}
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def _detector_specs(cfg: RunConfig) -> list[DetectorSpec]:
    specs = []
    for d in cfg.detectors:
        if DETECTORS[d] is None:
            specs.append(DetectorSpec(TAGS[d]))
            continue
        path = cfg.artifacts.get(d)
        if not path:
            raise DataError(f"detector {d} needs a trained artifact (--artifact {d}=PATH)")
        fc = _load_artifact(path)
        if fc.arch != DETECTORS[d]:
            raise DataError(f"artifact {path} holds a {fc.arch} model, not {DETECTORS[d]}")
        specs.append(DetectorSpec(TAGS[d], fc))
    return specs


def cmd_evaluate(cfg: RunConfig, args) -> int:
    seg = segments(cfg)
    specs = _detector_specs(cfg)
    ctx = StreamContext(seg.calibration.copy(), seg.test.values.copy(), seg.test.start,
                        cfg.noise_sigma, cfg.oracle_sigma, cfg.seed, cfg.detector_config())
    scenarios = [scenario_by_id(i) for i in cfg.scenario_ids()]
    suite = run_suite(ctx, specs, scenarios, cfg.repetitions, jobs=cfg.jobs)
    outdir = Path(args.out or cfg.output)
    header = {**cfg.header(), "config": {k: v for k, v in cfg.to_dict().items()
                                         if k not in ("output", "jobs")}}
    written = write_reports(suite, outdir, header)
    print((outdir / "tables.txt").read_text(encoding="utf-8"))
    log.info("wrote %s", ", ".join(p.name for p in written))
    if not suite.sound:
        log.error("a flagged value reached the downstream stream")
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_report(cfg: RunConfig, args) -> int:
    path = Path(args.results)
    if not path.is_file():
        raise DataError(f"no such results file: {path}")
    tables = path.parent / "tables.txt"
    if not tables.is_file():
        raise DataError(f"{tables} is missing next to {path}")
    doc = json.loads(path.read_text(encoding="utf-8"))
    print(tables.read_text(encoding="utf-8"))
    bad = [r for r in doc.get("runs", []) if not r["sound"]]
    print(f"runs: {len(doc.get('runs', []))}  substitution soundness: "
          f"{'ok' if not bad else f'{len(bad)} violations'}  "
          f"config=sha256:{doc.get('config_hash')}")
    return EXIT_OK


# ---- argument parsing -------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# flag dest -> RunConfig key
_OVERRIDES = {"data": "data_csv", "days": "synth_days", "seed": "seed", "synth_seed": "synth_seed",
              "train_fraction": "train_fraction", "calibration_hours": "calibration_hours",
              "model": "model", "lookback": "lookback", "trees": "n_trees",
              "max_features": "max_features", "n_min": "n_min", "epochs": "epochs",
              "hidden": "hidden", "dropout": "dropout", "batch_size": "batch_size",
              "learning_rate": "learning_rate", "contamination": "contamination",
              "reps": "repetitions", "noise_sigma": "noise_sigma",
              "oracle_sigma": "oracle_sigma", "stream_length": "stream_length",
              "jobs": "jobs", "output": "output"}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="diadetect", description=__doc__.split("\n\n")[0])
    p.add_argument("--version", action="version", version=f"diadetect {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, data=True):
        sp.add_argument("--config", help="JSON config file; flags override its keys")
        sp.add_argument("--seed", type=int, help="master seed")
        if data:
            sp.add_argument("--data", help="load CSV (timestamp,load_kw); default: synthetic")
            sp.add_argument("--days", type=int, help="synthetic series length in days")
            sp.add_argument("--synth-seed", type=int, help="synthetic series seed")
            sp.add_argument("--train-fraction", type=float, help="share of hours before the test split")
            sp.add_argument("--calibration-hours", type=int,
                            help="training tail held out for detector warm-up")
            sp.add_argument("--stream-length", type=int, help="test stream length in hours")

    sp = sub.add_parser("synth", help="write a synthetic load CSV")
    sp.add_argument("--config")
    sp.add_argument("--days", type=int, help="number of days (>= 2)")
    sp.add_argument("--seed", dest="synth_seed", type=int, help="noise seed")
    sp.add_argument("--out", default="synth.csv", help="output CSV path")
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("train", help="train a forecaster and report test accuracy")
    common(sp)
    sp.add_argument("--model", help="etr, lstm or bilstm")
    sp.add_argument("--lookback", type=int)
    sp.add_argument("--trees", type=int, help="ETR tree count")
    sp.add_argument("--max-features", type=int, help="ETR features per split")
    sp.add_argument("--n-min", type=int, help="ETR minimum node size to split")
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--hidden", type=int, nargs="+", help="recurrent layer widths")
    sp.add_argument("--dropout", type=float)
    sp.add_argument("--batch-size", type=int)
    sp.add_argument("--learning-rate", type=float)
    sp.add_argument("--jobs", type=int, help="threads for ETR tree growth")
    sp.add_argument("--out", help="artifact path (default OUTPUT/MODEL.npz)")
    sp.add_argument("--output", help="output directory")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("forecast", help="forecast the test split with a trained artifact")
    common(sp)
    sp.add_argument("--model-path", required=True, help="artifact written by train")
    sp.add_argument("--out", help="CSV path (default OUTPUT/forecast.csv)")
    sp.add_argument("--output", help="output directory")
    sp.set_defaults(func=cmd_forecast)

    sp = sub.add_parser("attack", help="write an attacked, noisy, labeled test stream")
    common(sp)
    sp.add_argument("--scenario", type=int, required=True, help="scenario id 1-30")
    sp.add_argument("--rep", type=int, default=0, help="repetition index")
    sp.add_argument("--noise-sigma", type=float)
    sp.add_argument("--out", help="CSV path")
    sp.add_argument("--output", help="output directory")
    sp.set_defaults(func=cmd_attack)

    sp = sub.add_parser("detect", help="run the online detector over a labeled stream")
    common(sp)
    sp.add_argument("--stream", required=True, help="labeled CSV written by attack")
    sp.add_argument("--model-path", help="forecaster artifact; omit for the oracle")
    sp.add_argument("--rep", type=int, default=0, help="repetition index for warm-up noise")
    sp.add_argument("--contamination", type=float, help="initial contamination")
    sp.add_argument("--noise-sigma", type=float)
    sp.add_argument("--oracle-sigma", type=float)
    sp.add_argument("--out", help="output directory for outcomes.csv/.jsonl")
    sp.add_argument("--output", help="output directory")
    sp.set_defaults(func=cmd_detect)

    sp = sub.add_parser("evaluate", help="run the attack-scenario suite and write reports")
    common(sp)
    sp.add_argument("--detector", action="append",
                    help="ee-oracle, ee-etr, ee-lstm or ee-bilstm (repeatable)")
    sp.add_argument("--artifact", action="append", metavar="DETECTOR=PATH",
                    help="trained artifact for a model detector (repeatable)")
    sp.add_argument("--scenarios", help="'all' or comma-separated ids 1-30")
    sp.add_argument("--reps", type=int, help="repetitions per scenario (>= 1)")
    sp.add_argument("--contamination", type=float, help="initial contamination")
    sp.add_argument("--noise-sigma", type=float)
    sp.add_argument("--oracle-sigma", type=float)
    sp.add_argument("--jobs", type=int, help="worker processes")
    sp.add_argument("--out", help="report directory (default OUTPUT)")
    sp.add_argument("--output", help="output directory")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("report", help="print the tables of a finished evaluation")
    sp.add_argument("--config")
    sp.add_argument("--results", required=True, help="results.json written by evaluate")
    sp.set_defaults(func=cmd_report)
    return p


def resolve_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    d = cfg.to_dict()
    for dest, key in _OVERRIDES.items():
        v = getattr(args, dest, None)
        if v is not None:
            d[key] = v
    if getattr(args, "detector", None):
        d["detectors"] = args.detector
    if getattr(args, "artifact", None):
        arts = dict(d["artifacts"])
        for item in args.artifact:
            name, sep, path = item.partition("=")
            if not sep or not path:
                raise UsageError(f"--artifact expects DETECTOR=PATH, got {item!r}")
            arts[name] = path
        d["artifacts"] = arts
    if getattr(args, "scenarios", None):
        d["scenarios"] = args.scenarios
    cfg = RunConfig.from_dict(d)
    cfg.validate()
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # usage errors, --help and --version
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(args)
        return args.func(cfg, args)
    except UsageError as exc:
        print(f"diadetect: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FileNotFoundError) as exc:
        print(f"diadetect: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingDiverged, DetectorError, np.linalg.LinAlgError, FloatingPointError,
            RuntimeError, ValueError) as exc:
        print(f"diadetect: runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"diadetect: cannot write output: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
