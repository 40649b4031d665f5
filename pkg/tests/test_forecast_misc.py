import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from diadetect.data import synth_load
from diadetect.forecast.artifact import load_forecaster, save_forecaster
from diadetect.forecast.etr import EtrParams
from diadetect.forecast.forecasters import OracleForecaster, train_forecaster
from diadetect.forecast.metrics import ForecastReport, mape, rmse_scaled, rmse_standard
from diadetect.forecast.oracle import oracle_forecast
from diadetect.forecast.recurrent import TrainConfig


def test_oracle_without_error_is_identity():
    y = synth_load(3, 0).values
    np.testing.assert_array_equal(oracle_forecast(y, 0.0, 5), y)


def test_oracle_error_level():
    y = synth_load(200, 1).values
    m = mape(y, oracle_forecast(y, 0.02, 3))
    # E|N(0, 0.02)| = 0.02 * sqrt(2 / pi)
    assert m == pytest.approx(0.02 * np.sqrt(2 / np.pi), rel=0.2)


def test_oracle_seeded():
    y = np.ones(50)
    np.testing.assert_array_equal(oracle_forecast(y, 0.1, 7), oracle_forecast(y, 0.1, 7))
    assert not np.array_equal(oracle_forecast(y, 0.1, 7), oracle_forecast(y, 0.1, 8))
    with pytest.raises(ValueError):
        oracle_forecast(y, -0.1, 0)


def test_metric_examples():
    assert mape([100, 200], [110, 180]) == pytest.approx(0.1)
    assert rmse_scaled([4.0], [2.0]) == pytest.approx(1.0)
    assert rmse_standard([1.0, 1.0], [4.0, -3.0]) == pytest.approx(np.sqrt(12.5))
    assert mape([5.0, 6.0], [5.0, 6.0]) == 0.0


def test_metric_input_errors():
    with pytest.raises(ValueError):
        mape([0.0, 1.0], [1.0, 1.0])
    with pytest.raises(ValueError):
        mape([1.0], [1.0, 2.0])
    with pytest.raises(ValueError):
        rmse_standard([], [])


pairs = st.integers(1, 30).flatmap(lambda n: st.tuples(
    st.lists(st.floats(0.1, 1e4), min_size=n, max_size=n),
    st.lists(st.floats(0.0, 1e4), min_size=n, max_size=n)))


@settings(max_examples=100, deadline=None)
@given(pairs)
def test_metrics_match_brute_force(pair):
    a, p = pair
    n = len(a)
    assert mape(a, p) == pytest.approx(sum(abs(x - y) / x for x, y in zip(a, p)) / n, rel=1e-12)
    assert rmse_scaled(a, p) == pytest.approx(
        (sum((x - y) ** 2 / x for x, y in zip(a, p)) / n) ** 0.5, rel=1e-12, abs=1e-12)
    assert rmse_standard(a, p) == pytest.approx(
        (sum((x - y) ** 2 for x, y in zip(a, p)) / n) ** 0.5, rel=1e-12, abs=1e-12)


def test_report_summary():
    rep = ForecastReport.from_predictions([1.0, 2.0], [1.0, 1.0], loss_curve=[0.5])
    s = rep.summary()
    assert s["n"] == 2 and s["loss_curve"] == [0.5]
    assert s["mape"] == pytest.approx(0.25)


def test_oracle_forecaster_indexing():
    fc = OracleForecaster(np.arange(10.0) + 1)
    assert fc.lookback == 0 and fc.tag == "EE-Oracle"
    assert fc.predict_next(None, 4) == 5.0
    np.testing.assert_array_equal(fc.forecast_series(np.zeros(3), 2), [3.0, 4.0, 5.0])


@pytest.mark.parametrize("arch", ["etr", "lstm", "bilstm"])
def test_artifact_round_trip(tmp_path, arch):
    values = synth_load(15, 2).values
    fc, _ = train_forecaster(values, arch, 14, EtrParams(4, 5, 3),
                             TrainConfig(epochs=1, hidden=(3, 3)), seed=4)
    path = tmp_path / f"{arch}.npz"
    save_forecaster(path, fc, {"note": "x"})
    back = load_forecaster(path)
    assert back.arch == arch and back.lookback == 14 and back.meta["note"] == "x"
    np.testing.assert_array_equal(back.forecast_series(values), fc.forecast_series(values))


def test_artifact_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_forecaster(tmp_path / "missing.npz")
    from diadetect.forecast.artifact import write_archive
    write_archive(tmp_path / "other.npz", {"a": np.zeros(1)}, {"format": "something-else"})
    with pytest.raises(ValueError):
        load_forecaster(tmp_path / "other.npz")


def test_forecast_series_alignment():
    values = synth_load(10, 3).values
    fc, _ = train_forecaster(values, "etr", 14, EtrParams(3, 5, 2), seed=0)
    preds = fc.forecast_series(values)
    assert len(preds) == len(values) - 14
    assert preds[5] == pytest.approx(fc.predict_next(values[5:19]))
    with pytest.raises(ValueError):
        fc.forecast_series(values[:14])
    with pytest.raises(ValueError):
        train_forecaster(values, "gru")
