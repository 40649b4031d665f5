import copy

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from diadetect.data import build_windows
from diadetect.forecast.recurrent import (BilstmParams, LayerParams, LstmParams, TrainConfig,
                                          TrainingDiverged, backward, bilstm_forward, forward,
                                          init_params, lstm_cell_step, lstm_forward, predict,
                                          train_recurrent)

from gradcheck import worst_relative_error


def _zero_layer(H, I):
    return LayerParams(np.zeros((4 * H, I)), np.zeros((4 * H, H)), np.zeros(4 * H))


def test_cell_with_zero_weights():
    h, c, _ = lstm_cell_step(_zero_layer(1, 1), [1.0], np.zeros(1), np.zeros(1))
    assert h[0] == 0.0 and c[0] == 0.0
    # every gate at 0.5, candidate tanh(0) = 0: the cell halves its memory
    h, c, _ = lstm_cell_step(_zero_layer(1, 1), [3.0], np.zeros(1), np.array([2.0]))
    assert c[0] == pytest.approx(1.0)
    assert h[0] == pytest.approx(0.5 * np.tanh(1.0))


def test_cell_keeps_memory_when_forget_open_and_input_closed():
    layer = _zero_layer(2, 1)
    layer.b[:2] = -50.0   # input gate ~ 0
    layer.b[2:4] = 50.0   # forget gate ~ 1
    c_prev = np.array([0.3, -0.7])
    _, c, _ = lstm_cell_step(layer, [1.0], np.zeros(2), c_prev)
    np.testing.assert_allclose(c, c_prev, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.floats(-100, 100), st.floats(-100, 100))
def test_hidden_state_bounded(seed, x, c0):
    layer = init_params("lstm", (3,), 1, 0.0, seed).layers[0]
    h, _, _ = lstm_cell_step(layer, [x], np.zeros(3), np.full(3, c0))
    assert np.all(np.abs(h) <= 1.0)
    # away from float saturation of tanh the bound is strict
    h, _, _ = lstm_cell_step(layer, [x / 20], np.zeros(3), np.full(3, c0 / 20))
    assert np.all(np.abs(h) < 1.0)


def test_cell_rejects_shape_mismatch():
    with pytest.raises(ValueError):
        lstm_cell_step(_zero_layer(2, 1), [1.0, 2.0], np.zeros(2), np.zeros(2))


@pytest.mark.parametrize("arch", ["lstm", "bilstm"])
def test_zero_network_predicts_zero(arch):
    params = init_params(arch, (4, 4), 1, 0.0, 0)
    for arr in params.named_arrays().values():
        arr[...] = 0.0
    out = forward(params, np.random.default_rng(0).random((5, 14)))
    np.testing.assert_array_equal(out, np.zeros(5))


@pytest.mark.parametrize("arch", ["lstm", "bilstm"])
def test_inference_is_deterministic(arch):
    params = init_params(arch, (4, 3), 1, 0.5, 1)
    X = np.random.default_rng(1).random((6, 10))
    np.testing.assert_array_equal(forward(params, X), forward(params, X))
    np.testing.assert_array_equal(predict(params, X, batch_size=4), forward(params, X))
    assert forward(params, X[0]) == pytest.approx(forward(params, X)[0], abs=1e-15)


def test_bilstm_with_silent_backward_branch_is_an_lstm():
    bi = init_params("bilstm", (4, 3), 1, 0.0, 2)
    bi.w_bwd[:] = 0.0
    uni = LstmParams(bi.forward, bi.w_fwd, bi.b_out)
    X = np.random.default_rng(2).random((7, 12))
    np.testing.assert_allclose(bilstm_forward(bi, X), lstm_forward(uni, X), atol=1e-15)


def test_bilstm_mirror_symmetry():
    bi = init_params("bilstm", (3,), 1, 0.0, 3)
    mirrored = BilstmParams(bi.backward, bi.forward, bi.w_bwd, bi.w_fwd, bi.b_out)
    X = np.random.default_rng(3).random((5, 9))
    np.testing.assert_allclose(bilstm_forward(bi, X), bilstm_forward(mirrored, X[:, ::-1]),
                               atol=1e-14)


def test_dropout_only_in_training():
    params = init_params("lstm", (6, 6), 1, 0.5, 4)
    X = np.random.default_rng(4).random((8, 10))
    a = forward(params, X, training=True, rng=np.random.default_rng(0))
    assert not np.allclose(a, forward(params, X))


@pytest.mark.parametrize("arch", ["lstm", "bilstm"])
def test_zero_loss_gives_zero_output_gradient(arch):
    params = init_params(arch, (3,), 1, 0.0, 5)
    X = np.random.default_rng(5).random((4, 6))
    pred, cache = forward(params, X, return_cache=True)
    grads = backward(params, cache, pred.copy())
    for g in grads.values():
        np.testing.assert_array_equal(g, 0.0)


def test_unused_parameters_get_zero_gradient():
    # with w_out = 0 the recurrent weights cannot influence the output
    params = init_params("lstm", (3, 3), 1, 0.0, 6)
    params.w_out[:] = 0.0
    X = np.random.default_rng(6).random((4, 6))
    _, cache = forward(params, X, return_cache=True)
    grads = backward(params, cache, np.ones(4))
    for name, g in grads.items():
        if name.startswith("layer."):
            np.testing.assert_array_equal(g, 0.0)
    assert np.any(grads["w_out"] != 0)


def test_backward_without_cache_raises():
    params = init_params("lstm", (2,), 1, 0.0, 0)
    with pytest.raises(ValueError, match="cache"):
        backward(params, None, np.ones(1))


@pytest.mark.parametrize("arch", ["lstm", "bilstm"])
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_gradients_match_finite_differences(arch, seed):
    assert worst_relative_error(arch, seed) <= 1e-4


def _sine_dataset(n=400, lookback=10):
    t = np.arange(n)
    return build_windows(2.0 + np.sin(2 * np.pi * t / 24), lookback)


def test_one_epoch_gives_one_loss_value():
    res = train_recurrent(_sine_dataset(), TrainConfig(epochs=1, hidden=(4,), dropout=0.0), "lstm")
    assert len(res.loss_curve) == 1


def test_training_is_reproducible():
    cfg = TrainConfig(epochs=2, hidden=(4, 4), dropout=0.3, seed=9)
    a = train_recurrent(_sine_dataset(), cfg, "bilstm")
    b = train_recurrent(_sine_dataset(), copy.deepcopy(cfg), "bilstm")
    assert a.loss_curve == b.loss_curve
    for k, v in a.params.named_arrays().items():
        np.testing.assert_array_equal(v, b.params.named_arrays()[k])


def test_training_reduces_loss_on_a_sine():
    cfg = TrainConfig(epochs=20, hidden=(8,), dropout=0.0, learning_rate=1e-2, seed=0)
    res = train_recurrent(_sine_dataset(), cfg, "lstm")
    assert res.loss_curve[-1] < 0.2 * res.initial_loss


def test_divergence_reports_epoch():
    cfg = TrainConfig(epochs=3, hidden=(2,), dropout=0.0, learning_rate=1e300)
    with np.errstate(all="ignore"), pytest.raises(TrainingDiverged) as err:
        train_recurrent(_sine_dataset(100), cfg, "lstm")
    assert err.value.epoch in (0, 1, 2)


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        TrainConfig(dropout=1.0)
    with pytest.raises(ValueError):
        init_params("gru")
