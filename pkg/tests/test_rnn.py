import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from molli_t1.rng import substream
from molli_t1.rnn import (
    CurveSource,
    DegenerateCurveError,
    NormalizationSpec,
    RnnConfig,
    RnnWeights,
    forward,
    grad_check,
    infer_map,
    init_state,
    loss_and_grad,
    loss_terms,
    predict,
    total_loss,
    train,
)
from molli_t1.rnn import model as M
from molli_t1.rnn.checkpoint import CheckpointError, load_checkpoint, read_history, save_checkpoint, write_history
from molli_t1.rnn.loss import per_sample_loss
from molli_t1.rnn.model import predict_normalized, softplus
from molli_t1.signal_model import ModelParams, SignalCurve, signed_signal
from molli_t1.synthdata import MolliStack, gen_batch_arrays

NORM = NormalizationSpec()
SMALL = RnnConfig(hidden_units=8, epochs=2, curves_per_epoch=384, batch_size=96, validation_curves=30, seed=3)


def _batch(n=30, seed=0):
    return gen_batch_arrays(n, substream(seed, "curves"))


# loss

def test_loss_terms_examples():
    t = np.array([0.0, 0.1, 0.5])
    truth = ModelParams(0.5, 1.0, 0.2)
    la, lb, lt = loss_terms(truth, truth, t)
    assert not la.any() and not lb.any() and not lt.any()
    la, lb, lt = loss_terms(ModelParams(0.5, 2.0, 0.2), truth, t)
    assert lb[0] == 1.0
    assert total_loss(ModelParams(0.75, 1.0, 0.2), truth, t) == pytest.approx(0.25, abs=1e-15)


def _long_forms(pred, truth, t):
    # each term as a difference of full signed curves, one parameter swapped
    pa, pb, ps = pred.T[:, :, None]
    ta, tb, ts = truth.T[:, :, None]
    y = lambda a, b, s: a - b * np.exp(-t / s)
    base = y(ta, tb, ts)
    return y(pa, tb, ts) - base, y(ta, pb, ts) - base, y(ta, tb, ps) - base


def test_loss_terms_agree_with_swapped_parameter_curves():
    r = substream(0, "loss")
    pred = r.uniform(0.1, 2.0, (100, 3))
    truth = r.uniform(0.1, 2.0, (100, 3))
    t = np.sort(r.uniform(0.0, 1.0, (100, 8)), axis=1)
    la, lb, lt = loss_terms(pred, truth, t)
    ra, rb, rt = _long_forms(pred, truth, t)
    np.testing.assert_allclose(la, ra, atol=1e-12, rtol=0)
    # the two exponential terms carry the opposite sign of the swapped-curve difference
    np.testing.assert_allclose(lb, -rb, atol=1e-12, rtol=0)
    np.testing.assert_allclose(lt, -rt, atol=1e-12, rtol=0)
    dual = np.mean(np.abs(ra) + np.abs(rb) + np.abs(rt), axis=-1)
    np.testing.assert_allclose(per_sample_loss(pred, truth, t), dual, atol=1e-12, rtol=0)


def test_curve_mode_is_mae_of_signed_curves():
    r = substream(1, "loss")
    pred, truth = r.uniform(0.1, 2.0, (20, 3)), r.uniform(0.1, 2.0, (20, 3))
    t = np.sort(r.uniform(0.0, 1.0, (20, 8)), axis=1)
    ref = np.mean(np.abs(signed_signal(pred[:, None, :], t) - signed_signal(truth[:, None, :], t)), axis=1)
    np.testing.assert_allclose(per_sample_loss(pred, truth, t, "curve"), ref, atol=1e-14)


# forward

def test_zero_weights_give_softplus_of_bias():
    w = RnnWeights.zeros(5)
    w.head_b[:] = [0.3, -1.0, 2.0]
    b = _batch(6)
    out = predict(w, b.times, b.values, NORM)
    ymax = b.values.max(axis=1)
    expected = np.log1p(np.exp([0.3, -1.0, 2.0]))
    np.testing.assert_allclose(out[:, 0], expected[0] * ymax, rtol=1e-15)
    np.testing.assert_allclose(out[:, 1], expected[1] * ymax, rtol=1e-15)
    np.testing.assert_allclose(out[:, 2], expected[2] * 5000.0, rtol=1e-15)


def test_zero_weights_head_bias_gradient_by_hand():
    w = RnnWeights.zeros(4)
    w.head_b[:] = [0.1, 0.7, -1.2]
    b = _batch(12, seed=2)
    _, _, g = loss_and_grad(w, b.times, b.values, b.params, NORM)
    q = np.log1p(np.exp(w.head_b))
    ymax = b.values.max(axis=1)
    ta, tb, ts = b.params[:, 0] / ymax, b.params[:, 1] / ymax, b.params[:, 2] / 5000.0
    tn = b.times / 5000.0
    et = np.exp(-tn / ts[:, None])
    ep = np.exp(-tn / q[2])
    da = np.sign(q[0] - ta)
    db = np.mean(np.sign(et * (q[1] - tb[:, None])) * et, axis=1)
    ds = np.mean(np.sign(tb[:, None] * (ep - et)) * tb[:, None] * ep * tn / q[2] ** 2, axis=1)
    sig = 1.0 / (1.0 + np.exp(-w.head_b))
    hand = np.array([da.mean(), db.mean(), ds.mean()]) * sig
    np.testing.assert_allclose(g.head_b, hand, rtol=1e-12, atol=1e-15)
    assert not g.head_w.any() and not g.lstm_w.any()


def test_scaling_invariance_of_normalized_outputs():
    w = RnnWeights.init(RnnConfig(hidden_units=8), substream(0, "weights"))
    b = _batch(30)
    q1, _ = predict_normalized(w, b.times, b.values, NORM)
    q2, _ = predict_normalized(w, b.times, 4.0 * b.values, NORM)
    np.testing.assert_array_equal(q1, q2)
    p1 = predict(w, b.times, b.values, NORM)
    p2 = predict(w, b.times, 3.7 * b.values, NORM)
    np.testing.assert_allclose(p2[:, :2], 3.7 * p1[:, :2], rtol=1e-12)
    np.testing.assert_allclose(p2[:, 2], p1[:, 2], rtol=1e-12)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_outputs_strictly_positive(seed):
    w = RnnWeights.init(RnnConfig(hidden_units=6), substream(seed, "weights"))
    w.head_b[:] = -30.0
    b = _batch(3, seed)
    assert np.all(predict(w, b.times, b.values, NORM) > 0)


def test_forward_is_deterministic_and_chunk_independent():
    w = RnnWeights.init(RnnConfig(hidden_units=8), substream(0, "weights"))
    b = _batch(30)
    np.testing.assert_array_equal(predict(w, b.times, b.values, NORM, chunk=7), predict(w, b.times, b.values, NORM))
    c = SignalCurve(b.times[4], b.values[4])
    assert forward(w, c).as_array().tolist() == predict(w, b.times, b.values, NORM)[4].tolist()


def test_degenerate_curve_rejected():
    w = RnnWeights.zeros(3)
    with pytest.raises(DegenerateCurveError):
        predict(w, np.arange(8.0)[None], np.zeros((1, 8)), NORM)


def test_config_validation():
    with pytest.raises(ValueError):
        RnnConfig(batch_size=100)
    with pytest.raises(ValueError):
        RnnConfig(loss_mode="mse")
    with pytest.raises(ValueError):
        NormalizationSpec(0.0)


# gradients

@pytest.mark.parametrize("seed", [0, 1, 2])
def test_grad_check_small_network(seed):
    assert grad_check(RnnConfig(hidden_units=4), substream(seed, "grad"), n_samples=6) < 1e-5


def test_grad_check_curve_mode():
    assert grad_check(RnnConfig(hidden_units=3, loss_mode="curve"), substream(0, "grad"), n_samples=6) < 1e-5


def test_grad_check_zero_step_is_zero():
    assert grad_check(RnnConfig(hidden_units=3), substream(0, "grad"), n_samples=3, step=0.0) == 0.0


def test_grad_check_detects_sign_bug(monkeypatch):
    good = M.backward_raw

    def buggy(w, cache, dz):
        g = good(w, cache, dz)
        g.lstm_w[:] *= -1.0
        return g

    monkeypatch.setattr(M, "backward_raw", buggy)
    assert grad_check(RnnConfig(hidden_units=3), substream(0, "grad"), n_samples=6) > 1e-3


# training

def test_zero_epochs_returns_initial_weights():
    cfg = RnnConfig(hidden_units=4, epochs=0, seed=5)
    st_ = train(cfg)
    init = init_state(cfg).weights
    for name, arr in init.tensors().items():
        np.testing.assert_array_equal(st_.weights.tensors()[name], arr)
    assert st_.history == []


def test_training_is_deterministic_and_reduces_loss():
    a = train(SMALL)
    b = train(SMALL)
    for name in M.TENSOR_ORDER:
        np.testing.assert_array_equal(a.weights.tensors()[name], b.weights.tensors()[name])
    assert a.history == b.history
    assert a.history[1][1] < a.history[0][1]


def test_resume_matches_uninterrupted(tmp_path):
    full = train(SMALL)
    half = train(RnnConfig(**{**SMALL.__dict__, "epochs": 1}))
    save_checkpoint(tmp_path / "c.mrnn", half, SMALL, NORM, {"scheme": "5(3)3"})
    state, cfg, norm, header = load_checkpoint(tmp_path / "c.mrnn")
    assert header["epoch"] == 1 and norm == NORM
    resumed = train(SMALL, norm, state=state)
    for name in M.TENSOR_ORDER:
        np.testing.assert_array_equal(resumed.weights.tensors()[name], full.weights.tensors()[name])
    assert resumed.history == full.history


def test_checkpoint_round_trip_and_errors(tmp_path):
    st_ = init_state(RnnConfig(hidden_units=5))
    save_checkpoint(tmp_path / "c.mrnn", st_, RnnConfig(hidden_units=5), NORM)
    back, cfg, _, _ = load_checkpoint(tmp_path / "c.mrnn")
    assert cfg.hidden_units == 5
    for name in M.TENSOR_ORDER:
        np.testing.assert_array_equal(back.weights.tensors()[name], st_.weights.tensors()[name])
    data = (tmp_path / "c.mrnn").read_bytes()
    (tmp_path / "bad.mrnn").write_bytes(b"XXXX" + data[4:])
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "bad.mrnn")
    (tmp_path / "long.mrnn").write_bytes(data + b"\0" * 8)
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "long.mrnn")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "missing.mrnn")


def test_history_file_round_trip(tmp_path):
    hist = [(1, 0.5, 0.25), (2, 0.4, 0.125)]
    write_history(tmp_path / "h.csv", hist)
    assert read_history(tmp_path / "h.csv") == hist


def test_validation_stream_is_ideal():
    v = CurveSource(0).validation(30)
    assert np.all(v.classes == 0)


# maps

def test_single_pixel_map_equals_forward():
    w = RnnWeights.init(RnnConfig(hidden_units=8), substream(0, "weights"))
    b = _batch(3)
    stack = MolliStack(b.values[0][:, None, None], b.times[0], 1.5)
    maps = infer_map(w, stack, NORM)
    p = forward(w, SignalCurve(b.times[0], b.values[0]))
    assert maps.t1[0, 0] == p.t1 and maps.valid[0, 0]


def test_all_background_map_is_invalid():
    w = RnnWeights.zeros(3)
    stack = MolliStack(np.zeros((8, 4, 5)), np.arange(8.0) * 100 + 100, 1.5)
    maps = infer_map(w, stack, NORM)
    assert not maps.valid.any() and np.isnan(maps.t1).all()
