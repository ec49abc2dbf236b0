import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from monsoon_bench.errors import ConfigError, NumericError, ShapeError, UsageError
from monsoon_bench.neural import (AdamConfig, AdamState, History, LayerSpec, TrainConfig, adam_step,
                                  backward, ensemble_average, fit, forward, init_params,
                                  load_checkpoint, peak_biased_grad, peak_biased_loss,
                                  save_checkpoint)
from monsoon_bench.neural.layers import activate, inverse_activation
from monsoon_bench.neural.training import _set_output_bias


def sig(z):
    return 1.0 / (1.0 + math.exp(-z))


# ---------------------------------------------------------------- forward

def test_zero_weights_sigmoid_head():
    specs = [LayerSpec("dense", 3, 4, "tanh"), LayerSpec("dense", 4, 2, "sigmoid")]
    p = init_params(specs, 0)
    p = p.replace([{k: np.zeros_like(a) for k, a in w.items()} for w in p.weights])
    out, _ = forward(p, np.random.default_rng(1).normal(size=(5, 3)))
    assert np.all(out == 0.5)


def test_identity_dense():
    p = init_params([LayerSpec("dense", 1, 1)], 0)
    p = p.replace([{"W": np.ones((1, 1)), "b": np.zeros(1)}])
    x = np.array([[3.25], [-1.0], [0.0]])
    assert np.array_equal(forward(p, x)[0], x)


def lstm_oracle(w, x, hdim):
    """Step-by-step scalar LSTM, gate order i, f, g, o."""
    batch, steps, nin = x.shape
    out = np.zeros((batch, hdim))
    for b in range(batch):
        h = [0.0] * hdim
        c = [0.0] * hdim
        for t in range(steps):
            z = []
            for j in range(4 * hdim):
                s = w["b"][j]
                s += sum(x[b, t, q] * w["W"][q, j] for q in range(nin))
                s += sum(h[q] * w["U"][q, j] for q in range(hdim))
                z.append(s)
            new_h = []
            for j in range(hdim):
                i, f = sig(z[j]), sig(z[hdim + j])
                g, o = math.tanh(z[2 * hdim + j]), sig(z[3 * hdim + j])
                c[j] = f * c[j] + i * g
                new_h.append(o * math.tanh(c[j]))
            h = new_h
        out[b] = h
    return out


def test_lstm_matches_scalar_oracle():
    p = init_params([LayerSpec("lstm", 3, 4, "tanh")], 5)
    x = np.random.default_rng(2).normal(size=(3, 6, 3))
    out, _ = forward(p, x)
    np.testing.assert_allclose(out, lstm_oracle(p.weights[0], x, 4), atol=1e-12)


def test_grouped_dense_matches_separate_nets():
    g = 4
    p = init_params([LayerSpec("dense", 3, 5, "relu", g), LayerSpec("dense", 5, 1, "sigmoid", g)], 9)
    x = np.random.default_rng(3).normal(size=(7, g, 3))
    out, _ = forward(p, x)
    for k in range(g):
        h = np.maximum(x[:, k] @ p.weights[0]["W"][k] + p.weights[0]["b"][k], 0)
        o = 1 / (1 + np.exp(-(h @ p.weights[1]["W"][k] + p.weights[1]["b"][k])))
        np.testing.assert_allclose(out[:, k], o, atol=1e-12)


def test_forward_shape_and_finite_errors():
    p = init_params([LayerSpec("dense", 2, 1)], 0)
    with pytest.raises(ShapeError):
        forward(p, np.zeros((3, 3)))
    with pytest.raises(NumericError):
        forward(p, np.array([[np.nan, 0.0]]))


def test_layer_spec_rejects_bad_dims():
    with pytest.raises(ShapeError):
        init_params([LayerSpec("dense", 2, 3), LayerSpec("dense", 4, 1)], 0)
    with pytest.raises(Exception):
        LayerSpec("dense", 0, 1)


def test_lstm_init_forget_bias():
    p = init_params([LayerSpec("lstm", 2, 3, "tanh")], 0)
    b = p.weights[0]["b"]
    assert np.all(b[3:6] == 1.0) and np.all(b[:3] == 0) and np.all(b[6:] == 0)
    assert np.all(np.abs(p.weights[0]["W"]) <= math.sqrt(1 / 3))


# ---------------------------------------------------------------- gradients

def loss_of(params, x, y, scale):
    out, _ = forward(params, x)
    return peak_biased_loss(out * scale, y)


def numeric_grads(params, x, y, scale, h=1e-5):
    grads = []
    for li, w in enumerate(params.weights):
        g = {}
        for k, a in w.items():
            ga = np.zeros_like(a)
            for idx in np.ndindex(a.shape):
                vals = []
                for sgn in (1, -1):
                    ws = [dict(ww) for ww in params.weights]
                    b = a.copy()
                    b[idx] += sgn * h
                    ws[li][k] = b
                    vals.append(loss_of(params.replace(ws), x, y, scale))
                ga[idx] = (vals[0] - vals[1]) / (2 * h)
            g[k] = ga
        grads.append(g)
    return grads


def analytic_grads(params, x, y, scale):
    out, trace = forward(params, x)
    pred = out * scale
    assert np.all(np.abs(pred - y) > 1e-3), "point too close to the kink"
    return backward(params, trace, peak_biased_grad(pred, y) * scale)


def assert_grads_close(a, n):
    for ga, gn in zip(a, n):
        for k in ga:
            err = np.linalg.norm(ga[k] - gn[k]) / max(np.linalg.norm(ga[k]) + np.linalg.norm(gn[k]), 1e-12)
            assert err < 1e-4, (k, err)


def test_gradcheck_dense_221():
    p = init_params([LayerSpec("dense", 2, 2, "tanh"), LayerSpec("dense", 2, 1, "sigmoid")], 11)
    rng = np.random.default_rng(4)
    x = rng.normal(size=(6, 2))
    y = np.array([[0.1], [9.0], [2.0], [7.5], [0.4], [6.0]])
    assert_grads_close(analytic_grads(p, x, y, 10.0), numeric_grads(p, x, y, 10.0))


def test_gradcheck_lstm_one_cell():
    p = init_params([LayerSpec("lstm", 1, 1, "tanh"), LayerSpec("dense", 1, 1, "sigmoid")], 12)
    rng = np.random.default_rng(5)
    x = rng.uniform(0, 1, size=(5, 4, 1))
    y = np.array([[0.5], [4.0], [1.0], [8.0], [0.0]])
    assert_grads_close(analytic_grads(p, x, y, 10.0), numeric_grads(p, x, y, 10.0))


def test_gradcheck_lstm_wider_relu_head():
    p = init_params([LayerSpec("lstm", 2, 3, "tanh"), LayerSpec("dense", 3, 2, "identity")], 13)
    rng = np.random.default_rng(6)
    x = rng.normal(size=(4, 3, 2))
    y = rng.normal(0, 3, size=(4, 2))
    assert_grads_close(analytic_grads(p, x, y, 1.0), numeric_grads(p, x, y, 1.0))


def test_gradcheck_grouped_dense():
    p = init_params([LayerSpec("dense", 3, 4, "tanh", 3), LayerSpec("dense", 4, 1, "sigmoid", 3)], 14)
    rng = np.random.default_rng(7)
    x = rng.normal(size=(5, 3, 3))
    y = rng.uniform(0, 10, size=(5, 3, 1))
    assert_grads_close(analytic_grads(p, x, y, 10.0), numeric_grads(p, x, y, 10.0))


def test_input_gradient():
    p = init_params([LayerSpec("dense", 3, 2, "tanh"), LayerSpec("dense", 2, 1)], 15)
    x = np.random.default_rng(8).normal(size=(1, 3))
    out, trace = forward(p, x)
    _, dx = backward(p, trace, np.ones_like(out), return_input_grad=True)
    h = 1e-6
    for q in range(3):
        e = np.zeros_like(x)
        e[0, q] = h
        num = (forward(p, x + e)[0] - forward(p, x - e)[0]).item() / (2 * h)
        assert dx[0, q] == pytest.approx(num, rel=1e-6)


def test_gradient_zero_at_kink():
    p = init_params([LayerSpec("dense", 2, 1, "identity")], 16)
    x = np.array([[1.0, 2.0], [0.5, -1.0]])
    out, trace = forward(p, x)
    y = out.copy()
    y[1] += 3.0  # only the first row sits on the kink
    g = peak_biased_grad(out, y)
    assert g[0, 0] == 0.0
    grads = backward(p, trace, g)
    # only the second row contributes
    np.testing.assert_allclose(grads[0]["W"][:, 0], x[1] * g[1, 0])


def test_stale_trace():
    p = init_params([LayerSpec("dense", 2, 1)], 0)
    out, trace = forward(p, np.ones((1, 2)))
    grads = backward(p, trace, np.ones_like(out))
    p2, _ = adam_step(p, grads, AdamState.zeros(p))
    with pytest.raises(UsageError):
        backward(p2, trace, np.ones_like(out))
    with pytest.raises(ShapeError):
        backward(p, trace, np.ones((2, 1)))


# ---------------------------------------------------------------- Adam

def test_adam_zero_gradient():
    p = init_params([LayerSpec("dense", 2, 2)], 0)
    st_ = AdamState.zeros(p)
    st_.m[0]["W"][...] = 0.5
    zero = [{k: np.zeros_like(a) for k, a in w.items()} for w in p.weights]
    p2, st2 = adam_step(p, zero, st_)
    for a, b in zip(p.weights, p2.weights):
        for k in a:
            # m decays by beta1, v stays 0, so only the moment-driven step moves W
            if k == "b":
                assert np.array_equal(a[k], b[k])
    np.testing.assert_allclose(st2.m[0]["W"], 0.45)
    assert np.all(st_.m[0]["W"] == 0.5)  # inputs untouched
    q, s = adam_step(p, zero, AdamState.zeros(p))
    for a, b in zip(p.weights, q.weights):
        for k in a:
            assert np.array_equal(a[k], b[k])


def test_adam_first_step_magnitude():
    p = init_params([LayerSpec("dense", 2, 3)], 0)
    grads = [{k: np.full_like(a, 0.37) for k, a in w.items()} for w in p.weights]
    cfg = AdamConfig(step_size=0.01)
    p2, s2 = adam_step(p, grads, AdamState.zeros(p), cfg)
    assert s2.t == 1
    delta = p.weights[0]["W"] - p2.weights[0]["W"]
    # m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps)
    np.testing.assert_allclose(delta, 0.01 * 0.37 / (0.37 + 1e-7), rtol=1e-12)


def test_adam_minimises_bowl():
    p = init_params([LayerSpec("dense", 1, 1)], 0)
    p = p.replace([{"W": np.array([[1.0]]), "b": np.array([-0.8])}])
    s = AdamState.zeros(p)
    cfg = AdamConfig(step_size=0.05)
    for _ in range(300):
        grads = [{k: 2 * a for k, a in p.weights[0].items()}]
        p, s = adam_step(p, grads, s, cfg)
    assert abs(p.weights[0]["W"][0, 0]) < 1e-2 and abs(p.weights[0]["b"][0]) < 1e-2


# ---------------------------------------------------------------- training

def small_net(n_in=3, act="identity"):
    return [LayerSpec("dense", n_in, 8, "tanh"), LayerSpec("dense", 8, 1, act)]


def test_constant_target():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(200, 3))
    y = np.full((200, 1), 7.0)
    cfg = TrainConfig(max_epochs=300, early_stop_patience=20, output_scale=10.0,
                      adam=AdamConfig(step_size=0.002))
    params, hist = fit(x, y, small_net(act="sigmoid"), cfg, seed=1)
    assert min(hist.val_loss) < 1e-3


def test_patience_zero_runs_one_epoch():
    rng = np.random.default_rng(0)
    cfg = TrainConfig(max_epochs=50, early_stop_patience=0)
    _, hist = fit(rng.normal(size=(40, 3)), rng.normal(size=(40, 1)), small_net(), cfg, seed=0)
    assert hist.epochs_run == 1


def test_same_seed_bit_identical():
    rng = np.random.default_rng(0)
    x, y = rng.normal(size=(60, 3)), rng.normal(size=(60, 1))
    cfg = TrainConfig(max_epochs=5, early_stop_patience=2, batch_size=16)
    a, ha = fit(x, y, small_net(), cfg, seed=3)
    b, hb = fit(x, y, small_net(), cfg, seed=3)
    assert np.array_equal(a.flat(), b.flat())
    assert ha.as_dict() == hb.as_dict()
    c, _ = fit(x, y, small_net(), cfg, seed=4)
    assert not np.array_equal(a.flat(), c.flat())


def test_worker_count_does_not_change_results():
    from monsoon_bench.neural.training import fit_ensemble
    rng = np.random.default_rng(1)
    x, y = rng.normal(size=(40, 3)), rng.normal(size=(40, 1))
    cfg = TrainConfig(max_epochs=4, early_stop_patience=2, batch_size=16)
    serial = fit_ensemble(x, y, small_net(), cfg, [0, 1, 2], workers=1)
    pooled = fit_ensemble(x, y, small_net(), cfg, [0, 1, 2], workers=2)
    for (a, _), (b, _) in zip(serial, pooled):
        assert np.array_equal(a.flat(), b.flat())


def test_linear_data_fit():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(300, 3))
    y = (x @ np.array([[1.5], [-2.0], [0.5]])) + 1.0
    cfg = TrainConfig(max_epochs=150, early_stop_patience=149, init_output_bias=False,
                      adam=AdamConfig(step_size=0.01))
    specs = [LayerSpec("dense", 3, 1)]
    p0 = init_params(specs, 2)
    initial = peak_biased_loss(forward(p0, x)[0], y)
    _, hist = fit(x, y, specs, cfg, seed=2)
    assert hist.train_loss[-1] < 0.1 * initial


def test_empty_samples():
    with pytest.raises(ConfigError):
        fit(np.zeros((0, 3)), np.zeros((0, 1)), small_net(), TrainConfig(), seed=0)


def test_divergence_names_epoch():
    # an absurd step size throws the weights to ~1e307 and the next forward overflows
    x = np.full((20, 3), 10.0)
    y = np.ones((20, 1))
    cfg = TrainConfig(max_epochs=3, early_stop_patience=1, adam=AdamConfig(step_size=1e307))
    with np.errstate(over="ignore"), pytest.raises(NumericError, match="epoch 1"):
        fit(x, y, [LayerSpec("dense", 3, 1)], cfg, seed=0)


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(max_epochs=5, early_stop_patience=5)
    with pytest.raises(ConfigError):
        TrainConfig(loss_exponent_under=0)


def test_output_bias_init():
    rng = np.random.default_rng(0)
    y = rng.uniform(1, 9, size=(50, 2))
    specs = [LayerSpec("dense", 3, 4, "tanh"), LayerSpec("dense", 4, 2, "sigmoid")]
    p = init_params(specs, 0)
    q = _set_output_bias(p, y, 10.0)
    np.testing.assert_allclose(activate("sigmoid", q.weights[-1]["b"]), y.mean(axis=0) / 10.0)
    assert inverse_activation("identity", np.array([2.0]))[0] == 2.0


def test_grouped_early_stopping_matches_solo():
    # each group of a grouped net should train exactly like a standalone net with the same init
    rng = np.random.default_rng(3)
    x = rng.normal(size=(80, 2, 3))
    y = np.stack([x[:, 0, :1] * 2.0, rng.normal(size=(80, 1))], axis=1)
    cfg = TrainConfig(max_epochs=30, early_stop_patience=3, batch_size=16)
    specs = [LayerSpec("dense", 3, 4, "tanh", 2), LayerSpec("dense", 4, 1, "identity", 2)]
    params, hist = fit(x, y, specs, cfg, seed=5)
    assert hist.epochs_run >= 1
    # the noise group cannot improve much; the signal group should fit well
    out, _ = forward(params, x[-8:])
    signal_err = np.abs(out[:, 0] - y[-8:, 0]).mean()
    assert signal_err < np.abs(y[-8:, 0]).mean()


# ---------------------------------------------------------------- ensemble & checkpoint

def test_ensemble_examples():
    v = np.array([1.0, 2.0])
    assert np.array_equal(ensemble_average([v]), v)
    assert np.array_equal(ensemble_average([np.zeros(3), np.full(3, 2.0)]), np.ones(3))
    rng = np.random.default_rng(0)
    vs = [rng.normal(size=5) for _ in range(10)]
    oracle = [sum(float(v[i]) for v in vs) / 10 for i in range(5)]
    np.testing.assert_allclose(ensemble_average(vs), oracle, atol=1e-12)
    with pytest.raises(ShapeError):
        ensemble_average([])
    with pytest.raises(ShapeError):
        ensemble_average([np.zeros(2), np.zeros(3)])


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 8), st.integers(0, 2 ** 31))
def test_ensemble_bounded_by_members(k, seed):
    rng = np.random.default_rng(seed)
    vs = [rng.normal(size=4) for _ in range(k)]
    m = ensemble_average(vs)
    assert np.all(m <= np.max(vs, axis=0) + 1e-12) and np.all(m >= np.min(vs, axis=0) - 1e-12)


def test_checkpoint_round_trip(tmp_path):
    specs = [LayerSpec("lstm", 2, 3, "tanh"), LayerSpec("dense", 3, 4), LayerSpec("dense", 4, 2, "sigmoid")]
    p = init_params(specs, 42)
    hist = History([1.0, 0.5], [1.1, 0.6], 2, False)
    path = tmp_path / "m.json"
    save_checkpoint(path, p, hist, {"cap_mm": 500.0})
    q, h2, meta = load_checkpoint(path)
    assert q.specs == p.specs and q.seed == 42
    assert np.array_equal(q.flat(), p.flat())
    assert h2.as_dict() == hist.as_dict() and meta == {"cap_mm": 500.0}
    x = np.random.default_rng(0).normal(size=(2, 5, 2))
    assert np.array_equal(forward(p, x)[0], forward(q, x)[0])
    doc = json.loads(path.read_text())
    assert doc["format_version"] == 1
    assert not list(tmp_path.glob("*.tmp*"))
