import json

import numpy as np
import pytest

from diadetect.attack import AttackScenario, add_measurement_noise, inject, scenario_id
from diadetect.data import synth_load
from diadetect.detect import (INLIER, OUTLIER, DetectorConfig, DetectorError, DetectorState,
                              detect_step, process_residual, run_stream, warm_up,
                              write_outcomes_csv, write_outcomes_jsonl)
from diadetect.forecast.etr import EtrParams
from diadetect.forecast.forecasters import OracleForecaster, train_forecaster
from diadetect.forecast.oracle import oracle_forecast

PREFIX = 720


def _oracle_setup(sigma=0.02, days=120, k=20, p=-30, seed=0):
    series = synth_load(days, seed)
    prefix, test = series.values[:PREFIX], series.slice(PREFIX, len(series))
    ls = inject(test, AttackScenario(k, p, scenario_id(k, p), seed=seed + 1)) \
        if p else None
    preds = np.concatenate([oracle_forecast(prefix, sigma, seed + 2),
                            oracle_forecast(test.values, sigma, seed + 3)])
    return OracleForecaster(preds), prefix, test, ls


def test_residual_examples():
    assert process_residual(110.0, 100.0) == pytest.approx(0.1)
    assert process_residual(90.0, 100.0) == pytest.approx(0.1)
    assert process_residual(5.0, 5.0) == 0.0
    with pytest.raises(DetectorError):
        process_residual(1.0, 0.0)


def test_warm_up_requirements():
    fc, prefix, _, _ = _oracle_setup()
    state = warm_up(fc, prefix[:168])
    assert state.warmed_up and state.t == 168
    assert len(state.legitimate_history) == 168
    with pytest.raises(DetectorError):
        warm_up(fc, prefix[:167])
    with pytest.raises(DetectorError):
        detect_step(DetectorState(fc, DetectorConfig()), 1.0)


def test_config_validation():
    with pytest.raises(ValueError):
        DetectorConfig(contamination=0.6)
    with pytest.raises(ValueError):
        DetectorConfig(c_min=0.1, contamination=0.05)
    with pytest.raises(ValueError):
        DetectorConfig(window=1)


def test_exact_forecast_uses_variance_floor():
    clean = synth_load(20, 1).values
    fc = OracleForecaster(clean)  # perfect forecast, zero residuals
    state = warm_up(fc, clean[:200])
    assert state.envelope.covariance[0, 0] == pytest.approx(1e-9)
    ok = detect_step(state, clean[200])
    assert ok.decision == INLIER and ok.distance == 0.0
    bad = detect_step(state, clean[201] * 1.01)
    assert bad.decision == OUTLIER and bad.passed == clean[201]


def test_outliers_replaced_inliers_passed_and_history_kept():
    fc, prefix, test, ls = _oracle_setup()
    state = warm_up(fc, prefix)
    seen = 0
    for y, lab in zip(ls.values[:300], ls.labels[:300]):
        before = len(state.legitimate_history)
        out = detect_step(state, float(y))
        if out.outlier:
            seen += 1
            assert out.passed == out.forecast
            assert len(state.legitimate_history) == before
            assert state.substitution_log[-1].t == out.t
            assert state.substitution_log[-1].received == y
        else:
            assert out.passed == y
            assert state.legitimate_history[-1] == out.processed
    assert seen == len(state.substitution_log) > 0


def test_model_forecaster_feeds_back_substitutions():
    values = synth_load(40, 4).values
    fc, _ = train_forecaster(values[:600], "etr", 14, EtrParams(10, 5, 2), seed=0)
    state = warm_up(fc, values[600:800], t0=600)
    out = detect_step(state, float(values[800]) * 3.0)
    assert out.outlier
    assert state.rolling[-1] == out.forecast
    window = list(state.rolling)
    out = detect_step(state, float(values[801]))
    assert out.forecast == pytest.approx(fc.predict_next(window))


def test_stream_is_deterministic_and_complete():
    fc, prefix, test, ls = _oracle_setup()
    a = run_stream(warm_up(fc, prefix, t0=0), ls)
    b = run_stream(warm_up(fc, prefix, t0=0), ls)
    assert len(a.outcomes) == len(ls)
    np.testing.assert_array_equal(a.decisions, b.decisions)
    np.testing.assert_array_equal(a.passed, b.passed)
    np.testing.assert_array_equal(a.labels, ls.labels)


def test_recall_grows_with_intensity():
    recalls = []
    for p in (-10, -30, -50):
        fc, prefix, test, ls = _oracle_setup(p=p, seed=2)
        res = run_stream(warm_up(fc, prefix), add_measurement_noise(ls, 0.02, 9))
        recalls.append(res.decisions[ls.labels].mean())
    assert recalls == sorted(recalls)
    assert recalls[-1] > 0.99


def test_clean_stream_has_few_false_alarms():
    # warm-up and stream share the same noise level
    fc, prefix, test, _ = _oracle_setup(p=0, seed=3)
    state = warm_up(fc, add_measurement_noise(prefix, 0.02, 4))
    res = run_stream(state, add_measurement_noise(test, 0.02, 5))
    assert res.decisions.mean() < 0.01


def test_multivariate_features():
    fc, prefix, test, ls = _oracle_setup(seed=4)
    res = run_stream(warm_up(fc, prefix, DetectorConfig(feature_dim=2)), ls)
    assert len(res.outcomes) == len(ls)
    assert res.decisions[ls.labels].mean() > 0.5


def test_outcome_files(tmp_path):
    fc, prefix, test, ls = _oracle_setup(days=40)
    res = run_stream(warm_up(fc, prefix), ls)
    write_outcomes_csv(res.outcomes, tmp_path / "o.csv", start=ls.start, t0=PREFIX,
                       header_comment="hdr")
    lines = (tmp_path / "o.csv").read_text().splitlines()
    assert lines[0] == "# hdr"
    assert lines[1] == "timestamp,received,forecast,processed,decision,passed"
    assert len(lines) == 2 + len(ls)
    assert lines[2].startswith(ls.start.strftime("%Y-%m-%dT%H:%M:%S"))
    write_outcomes_jsonl(res.outcomes, tmp_path / "o.jsonl")
    recs = [json.loads(x) for x in (tmp_path / "o.jsonl").read_text().splitlines()]
    assert len(recs) == len(ls) and recs[0]["timestamp"] == str(PREFIX)
    assert {r["decision"] for r in recs} <= {INLIER, OUTLIER}
