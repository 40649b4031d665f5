from datetime import datetime

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from diadetect.attack import (AttackScenario, LabeledSeries, add_measurement_noise,
                              attack_count, inject, load_labeled_csv, scenario_by_id,
                              scenario_grid, scenario_id, write_labeled_csv)
from diadetect.data import DataError, LoadSeries, synth_load


def test_grid_layout():
    grid = scenario_grid()
    assert [s.scenario_id for s in grid] == list(range(1, 31))
    assert (grid[0].k, grid[0].p) == (10, -10)
    assert (grid[14].k, grid[14].p) == (30, -50)
    assert (grid[15].k, grid[15].p) == (10, 10)
    assert (grid[29].k, grid[29].p) == (30, 50)
    assert {s.family for s in grid[:15]} == {"blackout"}
    assert {s.family for s in grid[15:]} == {"economic"}
    assert scenario_id(20, 30) == 23 and scenario_by_id(23) == grid[22]
    with pytest.raises(ValueError):
        scenario_id(15, 10)
    with pytest.raises(ValueError):
        scenario_by_id(31)


def test_inject_counts_and_values():
    series = synth_load(30, 0)
    sc = AttackScenario(20, -40, scenario_id(20, -40), seed=5)
    ls = inject(series, sc)
    assert ls.n_attacked == attack_count(len(series), 20) == 144
    np.testing.assert_allclose(ls.values[ls.labels], 0.6 * series.values[ls.labels])
    np.testing.assert_array_equal(ls.values[~ls.labels], series.values[~ls.labels])
    np.testing.assert_array_equal(ls.clean, series.values)
    again = inject(series, sc)
    np.testing.assert_array_equal(again.labels, ls.labels)
    assert not np.array_equal(inject(series, sc.with_seed(6)).labels, ls.labels)


@settings(max_examples=60, deadline=None)
@given(st.sampled_from(scenario_grid()), st.integers(0, 2**31 - 1), st.integers(10, 400))
def test_inject_properties(scenario, seed, n):
    values = np.random.default_rng(seed).uniform(1.0, 5.0, n)
    series = LoadSeries(datetime(2020, 1, 1), values)
    m = attack_count(n, scenario.k)
    if m == 0:
        with pytest.raises(ValueError, match="degenerate"):
            inject(series, scenario.with_seed(seed))
        return
    ls = inject(series, scenario.with_seed(seed))
    assert ls.n_attacked == m
    ratio = ls.values[ls.labels] / values[ls.labels]
    np.testing.assert_allclose(ratio, 1 + scenario.p / 100, rtol=1e-12)


def test_mean_shift_matches_intensity():
    series = synth_load(60, 1)
    ls = inject(series, AttackScenario(30, 50, scenario_id(30, 50), seed=2))
    assert ls.values[ls.labels].mean() / ls.clean[ls.labels].mean() == pytest.approx(1.5)


def test_noise_level():
    values = np.full(20_000, 3.0)
    noisy = add_measurement_noise(values, 0.02, seed=1)
    assert 0.018 <= np.std(noisy / values - 1) <= 0.022
    np.testing.assert_array_equal(add_measurement_noise(values, 0.0, 1), values)
    with pytest.raises(ValueError):
        add_measurement_noise(values, -1.0, 0)


def test_noise_skips_attacked_points_and_is_mask_independent():
    ls = inject(synth_load(10, 2), AttackScenario(30, 20, scenario_id(30, 20), seed=3))
    noisy = add_measurement_noise(ls, 0.05, seed=4)
    assert isinstance(noisy, LabeledSeries)
    np.testing.assert_array_equal(noisy.values[ls.labels], ls.values[ls.labels])
    assert np.all(noisy.values[~ls.labels] != ls.values[~ls.labels])
    everywhere = add_measurement_noise(ls.values, 0.05, seed=4)
    np.testing.assert_array_equal(noisy.values[~ls.labels], everywhere[~ls.labels])
    as_series = add_measurement_noise(ls.series(), 0.05, seed=4)
    assert isinstance(as_series, LoadSeries)


def test_labeled_csv_round_trip(tmp_path):
    ls = inject(synth_load(5, 3), AttackScenario(10, -10, 1, seed=0))
    path = tmp_path / "attacked.csv"
    write_labeled_csv(ls, path, comment="header line")
    assert path.read_text().startswith("# header line\n")
    series, labels = load_labeled_csv(path)
    np.testing.assert_array_equal(series.values, ls.values)
    np.testing.assert_array_equal(labels, ls.labels)
    assert series.start == ls.start


def test_labeled_csv_errors(tmp_path):
    with pytest.raises(DataError):
        load_labeled_csv(tmp_path / "nope.csv")
    bad = tmp_path / "bad.csv"
    bad.write_text("timestamp,load_kw,label\n2020-01-01T00:00:00,1.0,2\n")
    with pytest.raises(DataError):
        load_labeled_csv(bad)
    bad.write_text("timestamp,load_kw\n2020-01-01T00:00:00,1.0\n")
    with pytest.raises(DataError):
        load_labeled_csv(bad)
