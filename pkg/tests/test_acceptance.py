"""Acceptance criteria 1-8. Each test carries a ``criterion`` mark; the
conftest prints one PASS/FAIL line per criterion at the end of the run."""

import itertools
import math
import time
from fractions import Fraction

import numpy as np
import pytest

from diadetect.attack import scenario_grid
from diadetect.cli import RunConfig, main, segments
from diadetect.evaluation import (ConfusionMatrix, DetectorSpec, StreamContext, metrics,
                                  run_suite)
from diadetect.forecast.etr import EtrParams
from diadetect.forecast.forecasters import train_forecaster
from diadetect.forecast.metrics import mape
from diadetect.forecast.recurrent import TrainConfig
from diadetect.robust import decide, distances, fast_mcd, fit_envelope

from gradcheck import worst_relative_error

REPS = 3


@pytest.fixture(scope="module")
def benchmark():
    """Standard synthetic series (540 days, seed 1) laid out as the CLI does."""
    cfg = RunConfig()
    return cfg, segments(cfg)


def _test_mape(fc, seg):
    values = seg.series.values
    lb = fc.lookback
    preds = fc.forecast_series(values[seg.train_end - lb:], seg.train_end - lb)
    return mape(values[seg.train_end:], preds)


@pytest.fixture(scope="module")
def forecasters(benchmark):
    cfg, seg = benchmark
    t0 = time.perf_counter()
    etr, _ = train_forecaster(seg.fit_values, "etr", 14, EtrParams(100, 5, 2), seed=cfg.seed)
    bilstm, _ = train_forecaster(seg.fit_values, "bilstm", 14, None,
                                 TrainConfig(epochs=50, hidden=(32, 32), dropout=0.3),
                                 seed=cfg.seed)
    scores = {"etr": _test_mape(etr, seg), "bilstm": _test_mape(bilstm, seg)}
    return {"etr": etr, "bilstm": bilstm, "mape": scores, "seconds": time.perf_counter() - t0}


def _context(cfg, seg):
    return StreamContext(seg.calibration.copy(), seg.test.values.copy(), seg.test.start,
                         cfg.noise_sigma, cfg.oracle_sigma, cfg.seed, cfg.detector_config())


@pytest.fixture(scope="module")
def oracle_suite(benchmark):
    cfg, seg = benchmark
    assert len(seg.test) == 2000
    t0 = time.perf_counter()
    suite = run_suite(_context(cfg, seg), [DetectorSpec("EE-Oracle")], scenario_grid(), REPS)
    return suite, time.perf_counter() - t0


@pytest.mark.criterion(1, "BPTT gradients match central differences")
def test_criterion_1_gradient_check():
    t0 = time.perf_counter()
    worst = max(worst_relative_error(arch, seed, hidden=(2, 2), T=5, step=1e-5)
                for arch in ("lstm", "bilstm") for seed in range(20))
    elapsed = time.perf_counter() - t0
    print(f"worst relative error {worst:.2e} in {elapsed:.1f} s")
    assert worst <= 1e-4
    assert elapsed < 10


@pytest.mark.slow
@pytest.mark.criterion(2, "forecaster sanity on the benchmark series")
def test_criterion_2_forecaster_sanity(forecasters):
    m = forecasters["mape"]
    print(f"test MAPE: ETR {100 * m['etr']:.3f}%  BiLSTM {100 * m['bilstm']:.3f}%  "
          f"({forecasters['seconds']:.0f} s)")
    assert m["etr"] <= 0.05
    assert m["bilstm"] <= 0.05
    assert m["bilstm"] <= m["etr"] + 0.01
    assert forecasters["seconds"] < 600


def _brute_distance(x, mu, cov):
    diff = [xi - mi for xi, mi in zip(x, mu)]
    z = np.linalg.solve(cov, diff)
    return math.sqrt(max(sum(a * b for a, b in zip(diff, z)), 0.0))


def _brute_quantile(values, q):
    s = sorted(values)
    pos = (len(s) - 1) * q
    lo = math.floor(pos)
    hi = min(lo + 1, len(s) - 1)
    return s[lo] + (s[hi] - s[lo]) * (pos - lo)


@pytest.mark.criterion(3, "Mahalanobis and envelope threshold match brute force")
def test_criterion_3_envelope_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    for trial in range(50):
        d = int(rng.integers(1, 4))
        n = int(rng.integers(d + 5, 201))
        A = rng.normal(size=(d, d)) + 2 * np.eye(d)
        X = rng.normal(size=(n, d)) @ A.T + rng.normal(size=d)
        c = float(rng.uniform(0.01, 0.5))
        env = fit_envelope(X, c, seed=trial)
        brute = [_brute_distance(x, env.location, env.covariance) for x in X]
        fast = distances(X, env.location, env.precision)
        np.testing.assert_allclose(fast, brute, rtol=1e-10, atol=1e-10)
        thr = _brute_quantile(brute, 1 - c)
        assert env.threshold == pytest.approx(thr, rel=1e-10, abs=1e-10)
        for x, b in zip(X, brute):
            if abs(b - thr) > 1e-10:
                assert decide(env, x) == (b > thr)
    assert time.perf_counter() - t0 < 5


@pytest.mark.criterion(4, "FastMCD resists 20% gross outliers")
def test_criterion_4_breakdown():
    t0 = time.perf_counter()
    rng = np.random.default_rng(4)
    X = np.vstack([rng.standard_normal((800, 2)), np.full((200, 2), 100.0)])
    robust = np.max(np.abs(fast_mcd(X, seed=0).location))
    classical = np.max(np.abs(X.mean(axis=0)))
    print(f"location error: MCD {robust:.4f}, mean {classical:.2f}")
    assert robust < 0.2
    assert 15 < classical < 25
    assert classical / robust > 20
    assert time.perf_counter() - t0 < 5


def _brute_metrics(tp, tn, fp, fn):
    F = Fraction
    total = tp + tn + fp + fn
    acc = F(tp + tn, total)
    prec = F(tp, tp + fp) if tp + fp else None
    sens = F(tp, tp + fn) if tp + fn else None
    spec = F(tn, tn + fp) if tn + fp else None
    f1 = None
    if prec is not None and sens is not None and prec + sens > 0:
        f1 = F(2 * tp, 2 * tp + fp + fn)
    return {"accuracy": acc, "precision": prec, "sensitivity": sens, "specificity": spec,
            "f1": f1}


@pytest.mark.criterion(5, "metric identities over all small confusion matrices")
def test_criterion_5_metric_identities():
    checked = 0
    for tp, tn, fp, fn in itertools.product(range(13), repeat=4):
        total = tp + tn + fp + fn
        if total > 12:
            continue
        if total == 0:
            with pytest.raises(ValueError):
                metrics(ConfusionMatrix(0, 0, 0, 0))
            continue
        got = metrics(ConfusionMatrix(tp, tn, fp, fn)).as_dict()
        for name, want in _brute_metrics(tp, tn, fp, fn).items():
            if want is None:
                assert got[name] is None, (tp, tn, fp, fn, name)
            else:
                assert abs(got[name] - float(want)) <= 1e-12, (tp, tn, fp, fn, name)
        checked += 1
    assert checked == 1819


@pytest.mark.criterion(6, "oracle scenario suite reproduces the intensity profile")
def test_criterion_6_oracle_suite(oracle_suite):
    suite, elapsed = oracle_suite
    assert len(suite.records) == 30 * REPS
    f1 = {}
    for r in suite.results:
        sc, m = r.scenario, r.mean
        f1[(sc.family, sc.k, abs(sc.p))] = m.f1
        print(f"scenario {sc.scenario_id:2d} k={sc.k} p={sc.p:+d}  acc {m.accuracy:.4f}  "
              f"spec {m.specificity:.4f}  f1 {m.f1:.4f}")
        if abs(sc.p) == 50:
            for v in (m.accuracy, m.specificity, m.f1):
                assert v >= 0.995
        if abs(sc.p) >= 30:
            assert m.f1 >= 0.95
        if abs(sc.p) == 10:
            assert m.f1 >= 0.70
    for family in ("blackout", "economic"):
        for k in (10, 20, 30):
            series = [f1[(family, k, p)] for p in (10, 20, 30, 40, 50)]
            assert series == sorted(series), (family, k, series)
    print(f"suite runtime {elapsed:.1f} s")
    assert elapsed < 60


@pytest.mark.criterion(7, "evaluate is byte-for-byte reproducible")
def test_criterion_7_determinism(tmp_path, capsys):
    dirs = [tmp_path / "a", tmp_path / "b"]
    for d in dirs:
        assert main(["evaluate", "--out", str(d)]) == 0
    capsys.readouterr()
    names = sorted(p.name for p in dirs[0].iterdir())
    assert names == sorted(p.name for p in dirs[1].iterdir())
    assert "results.json" in names
    for name in names:
        assert (dirs[0] / name).read_bytes() == (dirs[1] / name).read_bytes(), name


@pytest.mark.slow
@pytest.mark.criterion(8, "no flagged value is ever passed downstream")
def test_criterion_8_substitution_soundness(benchmark, forecasters, oracle_suite):
    cfg, seg = benchmark
    specs = [DetectorSpec("EE-ETR", forecasters["etr"]),
             DetectorSpec("EE-BiLSTM", forecasters["bilstm"])]
    model_suite = run_suite(_context(cfg, seg), specs, scenario_grid(), REPS)
    records = oracle_suite[0].records + model_suite.records
    assert len(records) == 270
    bad = [(r.detector, r.scenario_id, r.repetition) for r in records if not r.sound]
    assert not bad
    for r in model_suite.results:
        assert r.mean.accuracy is not None
