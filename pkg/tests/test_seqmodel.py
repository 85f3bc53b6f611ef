import math

import numpy as np
import pytest

from hopredict import seqmodel as sm
from hopredict.seqmodel import LayerSpec, ModelSpec, TrainConfig


def _tiny_spec(units=(3,), input_size=2, dropout=0.0, rec=0.0):
    return ModelSpec(input_size=input_size,
                     layers=tuple(LayerSpec(u, dropout, rec) for u in units))


# --- forward ---------------------------------------------------------------------

def test_zero_weights_give_half_half():
    w = sm.zero_weights(ModelSpec())
    pred = sm.forward(w, np.random.default_rng(0).random((10, 12)))
    assert pred.probs == (0.5, 0.5)


def _scalar_sigmoid(x):
    return 1.0 / (1.0 + math.exp(-x))


def _hand_lstm_step(x, W, b, V, c_out):
    # one timestep from h = c = 0: only the input kernel and bias matter
    H = len(b) // 4
    h = []
    for j in range(H):
        z = [sum(x[m] * W[m][g * H + j] for m in range(len(x))) + b[g * H + j] for g in range(4)]
        i, f, g, o = _scalar_sigmoid(z[0]), _scalar_sigmoid(z[1]), math.tanh(z[2]), _scalar_sigmoid(z[3])
        c = f * 0.0 + i * g
        h.append(o * math.tanh(c))
    logits = [sum(h[j] * V[j][n] for j in range(H)) + c_out[n] for n in range(2)]
    m = max(logits)
    e = [math.exp(v - m) for v in logits]
    return e[0] / sum(e), e[1] / sum(e)


def test_one_layer_two_cells_one_step_matches_hand_unrolled_cell():
    spec = _tiny_spec(units=(2,), input_size=3)
    w = sm.init_weights(spec, 0)
    W = [[0.1, -0.2, 0.3, 0.05, 0.4, -0.1, 0.2, 0.0],
         [-0.3, 0.25, 0.1, -0.4, 0.0, 0.3, -0.2, 0.15],
         [0.2, 0.1, -0.05, 0.3, -0.25, 0.2, 0.1, -0.3]]
    b = [0.05, -0.05, 1.0, 1.0, 0.1, -0.2, 0.0, 0.3]
    V = [[0.7, -0.4], [-0.6, 0.9]]
    c_out = [0.1, -0.1]
    w.lstm[0].W[...] = W
    w.lstm[0].b[...] = b
    w.lstm[0].U[...] = np.random.default_rng(1).random((2, 8))  # unused at k=1
    w.V[...] = V
    w.c[...] = c_out
    x = [0.3, 0.8, 0.5]
    p0, p1 = _hand_lstm_step(x, W, b, V, c_out)
    pred = sm.forward(w, np.array([x]))
    assert pred.p_no_ho == pytest.approx(p0, abs=1e-14)
    assert pred.p_ho == pytest.approx(p1, abs=1e-14)


def test_eval_forward_is_bit_stable_and_normalized():
    w = sm.init_weights(ModelSpec(), 3)
    X = np.random.default_rng(2).random((10, 12))
    a, b = sm.forward(w, X), sm.forward(w, X)
    assert a.probs == b.probs
    assert abs(sum(a.probs) - 1.0) <= 1e-9
    assert 0.0 <= a.p_ho <= 1.0


def test_train_mode_forward_depends_on_dropout_seed_only():
    w = sm.init_weights(ModelSpec(), 3)
    X = np.random.default_rng(2).random((10, 12))
    assert sm.forward(w, X, True, 5).probs == sm.forward(w, X, True, 5).probs
    assert sm.forward(w, X, True, 5).probs != sm.forward(w, X, True, 6).probs


def test_single_window_matches_batch_bit_exactly():
    w = sm.init_weights(ModelSpec(), 4)
    X = np.random.default_rng(5).random((37, 10, 12))
    batch = sm.predict_proba(w, X)
    for i in (0, 17, 36):
        assert np.array_equal(sm.predict_proba(w, X[i:i + 1])[0], batch[i])


def test_predict_proba_agrees_with_training_forward():
    w = sm.init_weights(ModelSpec(), 4)
    X = np.random.default_rng(5).random((20, 6, 12))
    np.testing.assert_allclose(sm.predict_proba(w, X), sm.forward_batch(w, X)[0], rtol=0, atol=1e-12)


def test_shape_mismatch_rejected():
    w = sm.init_weights(ModelSpec(), 0)
    with pytest.raises(sm.ModelError):
        sm.forward(w, np.zeros((10, 11)))


def test_overflowing_logits_raise_model_error():
    w = sm.init_weights(_tiny_spec(), 0)
    w.V[...] = np.inf
    with pytest.raises(sm.ModelError):
        sm.predict_proba(w, np.ones((1, 2, 2)))


# --- loss -----------------------------------------------------------------------

def test_loss_examples():
    assert sm.sample_loss(sm.Prediction(0.5, 0.5), 1) == pytest.approx(math.log(2))
    assert sm.sample_loss(sm.Prediction(0.0, 1.0), 1) == 0.0
    v = sm.sample_loss(sm.Prediction(0.75, 0.25), 1, (0.5610, 4.5977))
    assert v == pytest.approx(4.5977 * -math.log(0.25))
    assert round(v, 3) == 6.374


def test_loss_floor():
    assert sm.sample_loss(sm.Prediction(1.0, 0.0), 1) == pytest.approx(-math.log(1e-12))


# --- gradients -------------------------------------------------------------------

def test_output_bias_gradient_of_zero_net_is_p_minus_onehot():
    w = sm.zero_weights(_tiny_spec())
    X = np.random.default_rng(0).random((1, 4, 2))
    g = sm.backward(w, X, np.array([1]))
    np.testing.assert_array_equal(g.c, [0.5, -0.5])


@pytest.mark.parametrize("seed,units,k", [(0, (3,), 4), (1, (2, 3), 3), (2, (2, 2, 2), 5), (3, (), 2)])
def test_bptt_matches_finite_differences(seed, units, k):
    spec = _tiny_spec(units)
    w = sm.init_weights(spec, seed)
    rng = np.random.default_rng(seed + 10)
    X = rng.random((5, k, 2))
    y = rng.integers(0, 2, 5)
    cw = (0.7, 2.3)
    _, g = sm.loss_and_grad(w, X, y, cw)
    num = sm.numerical_grad(w, X, y, cw, eps=1e-5)
    ana = g.flat()
    rel = np.abs(ana - num) / np.maximum(np.maximum(np.abs(ana), np.abs(num)), 1e-7)
    assert rel.max() < 1e-4


def test_bptt_with_fixed_dropout_masks_matches_finite_differences():
    spec = _tiny_spec((3, 2), dropout=0.3, rec=0.5)
    w = sm.init_weights(spec, 7)
    rng = np.random.default_rng(8)
    X = rng.random((4, 3, 2))
    y = np.array([0, 1, 1, 0])
    masks = sm.sample_masks(spec, 4, rng)
    _, g = sm.loss_and_grad(w, X, y, (1.0, 1.0), masks)
    theta = w.flat()
    eps = 1e-5
    num = np.empty_like(theta)
    for j in range(theta.size):
        for sign in (1, -1):
            t2 = theta.copy()
            t2[j] += sign * eps
            w.set_flat(t2)
            val = sm.loss(sm.forward_batch(w, X, masks)[0], y, (1.0, 1.0))
            num[j] = val if sign == 1 else (num[j] - val) / (2 * eps)
    np.testing.assert_allclose(g.flat(), num, rtol=1e-4, atol=1e-9)


def test_duplicated_batch_gives_single_sample_gradient():
    w = sm.init_weights(_tiny_spec((3,)), 1)
    X = np.random.default_rng(0).random((1, 3, 2))
    g1 = sm.backward(w, X, np.array([1]))
    g4 = sm.backward(w, np.repeat(X, 4, axis=0), np.array([1] * 4))
    np.testing.assert_allclose(g4.flat(), g1.flat(), rtol=1e-12, atol=1e-15)


def test_zero_learning_rate_step_leaves_weights_unchanged():
    w = sm.init_weights(_tiny_spec(), 2)
    before = w.copy()
    g = sm.backward(w, np.random.default_rng(0).random((3, 2, 2)), np.array([0, 1, 1]))
    for opt in (sm.SGD(0.0), sm.Adam(0.0)):
        opt.step(w, g)
    assert w.equals(before)


# --- dropout ----------------------------------------------------------------------

def test_variational_masks_are_constant_across_timesteps():
    spec = _tiny_spec((4,), dropout=0.0, rec=0.5)
    w = sm.init_weights(spec, 0)
    masks = sm.sample_masks(spec, 6, np.random.default_rng(1))
    assert masks.recurrent[0].shape == (6, 4)  # no time axis
    _, cache = sm.forward_batch(w, np.random.default_rng(2).random((6, 8, 2)), masks, keep_cache=True)
    dropped = masks.recurrent[0] == 0
    assert dropped.any()
    for t in range(1, 8):
        hin = cache["layers"][0]["hin"][t]
        assert np.all(hin[dropped] == 0)
        assert np.all(hin[~dropped] != 0)


def test_mask_scaling_is_inverted_dropout():
    spec = _tiny_spec((2,), dropout=0.25, rec=0.5)
    m = sm.sample_masks(spec, 1000, np.random.default_rng(0))
    assert set(np.unique(m.inputs[0])) <= {0.0, 1 / 0.75}
    assert set(np.unique(m.recurrent[0])) <= {0.0, 2.0}


# --- training ----------------------------------------------------------------------

def _toy_task(n, rng):
    # label = whether the first feature's mean over the sequence exceeds 0.5
    X = rng.random((n, 4, 2))
    y = (X[:, :, 0].mean(axis=1) > 0.5).astype(int)
    return X, y


def test_toy_sequence_task_reaches_99_percent():
    rng = np.random.default_rng(0)
    X, y = _toy_task(200, rng)
    spec = _tiny_spec((8,))
    cfg = TrainConfig(epochs=200, batch_size=20, learning_rate=0.02, seed=0, early_stop_patience=0)
    res = sm.train_arrays(X, y, X, y, spec, cfg)
    acc = np.mean((sm.predict_proba(res.weights, X)[:, 1] >= 0.5) == y)
    assert acc >= 0.99


def test_training_is_reproducible(tmp_path):
    rng = np.random.default_rng(1)
    X, y = _toy_task(60, rng)
    spec = _tiny_spec((3,), dropout=0.1, rec=0.5)
    cfg = TrainConfig(epochs=3, batch_size=16, seed=9)
    paths = []
    for i in range(2):
        res = sm.train_arrays(X, y, X, y, spec, cfg)
        paths.append(tmp_path / f"w{i}.json")
        sm.save_weights(paths[-1], res.weights, {"seed": 9})
    assert paths[0].read_bytes() == paths[1].read_bytes()


def test_training_logs_every_epoch_and_early_stops():
    X = np.random.default_rng(0).random((30, 2, 2))
    y = np.zeros(30, int)
    y[:3] = 1
    cfg = TrainConfig(epochs=50, batch_size=10, learning_rate=1e-6, early_stop_patience=2)
    res = sm.train_arrays(X, y, X, y, _tiny_spec(), cfg)
    assert res.stopped_early
    assert [e.epoch for e in res.log] == list(range(1, len(res.log) + 1))
    assert len(res.log) < 50


def test_divergence_reports_epoch():
    X = np.random.default_rng(0).random((8, 2, 2))
    y = np.array([0, 1] * 4)
    init = sm.init_weights(_tiny_spec(), 0)
    init.V[...] = np.nan
    with pytest.raises(sm.DivergenceError) as exc:
        sm.train_arrays(X, y, X, y, _tiny_spec(), TrainConfig(epochs=2), init=init)
    assert exc.value.epoch == 1


def test_logistic_regression_loss_decreases_every_full_batch_step():
    spec = ModelSpec(input_size=3, layers=())
    rng = np.random.default_rng(0)
    X = rng.normal(size=(50, 1, 3))
    y = (X[:, 0, 0] + 0.5 * X[:, 0, 1] > 0).astype(int)
    w = sm.init_weights(spec, 1)
    opt = sm.SGD(0.1)
    prev = math.inf
    for _ in range(100):
        value, g = sm.loss_and_grad(w, X, y)
        assert value < prev
        prev = value
        opt.step(w, g)


def test_empty_training_split_rejected():
    with pytest.raises(sm.ModelError):
        sm.train_arrays(np.zeros((0, 2, 2)), [], np.zeros((1, 2, 2)), [0], _tiny_spec(), TrainConfig())


# --- persistence -------------------------------------------------------------------

def test_save_load_round_trip_is_exact(tmp_path):
    w = sm.init_weights(ModelSpec(), 11)
    path = tmp_path / "w.json"
    meta = {"window_spec": {"history_k": 10, "horizon_t": 9}, "seed": 11}
    sm.save_weights(path, w, meta)
    back, meta2 = sm.load_weights(path)
    assert back.equals(w)
    assert meta2["window_spec"] == meta["window_spec"]
    assert meta2["format_version"] == sm.FORMAT_VERSION


def test_truncated_file_is_an_error(tmp_path):
    path = tmp_path / "w.json"
    sm.save_weights(path, sm.init_weights(_tiny_spec(), 0))
    data = path.read_bytes()
    path.write_bytes(data[: len(data) // 2])
    with pytest.raises(sm.WeightFileError):
        sm.load_weights(path)


def test_window_mismatch_refused(tmp_path):
    path = tmp_path / "w.json"
    sm.save_weights(path, sm.init_weights(_tiny_spec(), 0), {"window_spec": {"history_k": 10, "horizon_t": 9}})
    with pytest.raises(sm.WeightFileError, match="window"):
        sm.load_weights(path, expect_window={"history_k": 5})


def test_version_and_shape_mismatch_refused(tmp_path):
    import json
    path = tmp_path / "w.json"
    sm.save_weights(path, sm.init_weights(_tiny_spec(), 0))
    doc = json.loads(path.read_text())
    doc["format_version"] = 99
    path.write_text(json.dumps(doc))
    with pytest.raises(sm.WeightFileError, match="format_version"):
        sm.load_weights(path)
    doc["format_version"] = sm.FORMAT_VERSION
    doc["parameters"][0]["shape"] = [5, 12]
    path.write_text(json.dumps(doc))
    with pytest.raises(sm.WeightFileError, match="shape"):
        sm.load_weights(path)


def test_default_layers_and_parameter_count():
    spec = ModelSpec()
    assert [l.units for l in spec.layers] == [32, 64, 32]
    assert all(l.dropout == 0.10 and l.recurrent_dropout == 0.50 for l in spec.layers)
    # 4H(n_in + H + 1) per layer plus the dense layer
    expected = sum(4 * h * (n + h + 1) for n, h in ((12, 32), (32, 64), (64, 32))) + 32 * 2 + 2
    assert sm.init_weights(spec, 0).n_params() == expected
