"""Layer maths, parameter counts and finite-difference gradient checks."""
import math

import numpy as np
import pytest

from flowcast import _kernels
from flowcast.errors import DegenerateBatch, ShapeMismatch
from flowcast.nn import (
    LAYER_NAMES,
    ModelConfig,
    bn_backward,
    bn_forward,
    build_model,
    dense_backward,
    dense_forward,
    dropout_backward,
    dropout_forward,
    hard_sigmoid,
    lstm_backward,
    lstm_forward,
    lstm_param_count,
    param_count,
)

STEP = 1e-5
TOL = 1e-4


def rel_error(analytic, numeric):
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-6)
    return float(np.max(np.abs(analytic - numeric) / denom))


def numeric_grad(loss, arr):
    """Central differences of ``loss()`` with respect to ``arr`` (perturbed in place)."""
    out = np.zeros_like(arr)
    for idx in np.ndindex(arr.shape):
        old = arr[idx]
        arr[idx] = old + STEP
        up = loss()
        arr[idx] = old - STEP
        down = loss()
        arr[idx] = old
        out[idx] = (up - down) / (2 * STEP)
    return out


@pytest.fixture(params=_kernels.available_backends())
def backend(request):
    prev = _kernels.set_backend(request.param)
    yield request.param
    _kernels.set_backend(prev)


# -- activations and simple layers --------------------------------------------

def test_hard_sigmoid():
    assert hard_sigmoid(0.0) == 0.5
    assert hard_sigmoid(2.5) == 1.0
    assert hard_sigmoid(-3.0) == 0.0


def test_dense_examples():
    x = np.array([[1.5, -2.0]])
    y, _ = dense_forward({"W": np.eye(2), "b": np.zeros(2)}, x, "linear")
    np.testing.assert_array_equal(y, x)
    y, _ = dense_forward({"W": np.eye(1), "b": np.zeros(1)}, np.array([[-1.0]]), "relu")
    assert y[0, 0] == 0.0
    y, _ = dense_forward({"W": np.array([[2.0]]), "b": np.array([1.0])}, np.array([[3.0]]), "linear")
    assert y[0, 0] == 7.0


def test_dropout_modes(rng):
    x = rng.normal(size=(50, 7))
    assert dropout_forward(x, 0.4, training=False)[0] is x
    np.testing.assert_array_equal(dropout_forward(x, 0.0, True, rng)[0], x)
    y, keep = dropout_forward(x, 0.4, True, rng)
    np.testing.assert_array_equal(y[keep], x[keep] / 0.6)
    assert np.all(y[~keep] == 0)


def test_dropout_expectation():
    x = np.linspace(0.5, 2.0, 20)
    rng = np.random.default_rng(0)
    total = np.zeros_like(x)
    for _ in range(10_000):
        total += dropout_forward(x, 0.4, True, rng)[0]
    assert np.max(np.abs(total / 10_000 - x) / np.abs(x)) < 0.02


# -- LSTM ---------------------------------------------------------------------

def lstm_params(d, h, rng, scale=0.5):
    return {"W": rng.normal(scale=scale, size=(d, 4 * h)),
            "U": rng.normal(scale=scale, size=(h, 4 * h)),
            "b": rng.normal(scale=scale, size=4 * h)}


def test_lstm_zero_params(rng, backend):
    p = {"W": np.zeros((3, 8)), "U": np.zeros((2, 8)), "b": np.zeros(8)}
    out, _ = lstm_forward(p, rng.normal(size=(5, 4, 3)))
    assert np.all(out == 0)


def test_lstm_hand_evaluation(backend):
    h = 1
    b = np.full(4 * h, 10.0)
    b[2] = math.atanh(0.5)
    p = {"W": np.zeros((1, 4)), "U": np.zeros((1, 4)), "b": b}
    out, _ = lstm_forward(p, np.zeros((3, 1, 1)), return_sequence=True)
    np.testing.assert_allclose(out[:, 0, 0], np.tanh([0.5, 1.0, 1.5]), rtol=1e-15)


def test_lstm_reference_recurrence(rng, backend):
    """Compare against a per-sample loop written straight from the gate equations."""
    d, h, L, B = 3, 4, 6, 2
    p = lstm_params(d, h, rng)
    x = rng.normal(size=(L, B, d))
    out, _ = lstm_forward(p, x)
    for r in range(B):
        hs, cs = np.zeros(h), np.zeros(h)
        for t in range(L):
            z = x[t, r] @ p["W"] + hs @ p["U"] + p["b"]
            i, f, g, o = z[:h], z[h:2 * h], z[2 * h:3 * h], z[3 * h:]
            cs = hard_sigmoid(f) * cs + hard_sigmoid(i) * np.tanh(g)
            hs = hard_sigmoid(o) * np.tanh(cs)
            np.testing.assert_allclose(out[t, r], hs, rtol=1e-12, atol=1e-14)


def test_default_output_shapes():
    m = build_model(ModelConfig(6, 24), seed=0)
    x = np.eye(6)[np.random.default_rng(0).integers(0, 6, (3, 24))]
    seq, _ = lstm_forward(m.layer("lstm1").params, x.transpose(1, 0, 2), True)
    assert seq.shape == (24, 3, 128)
    last, _ = lstm_forward(m.layer("lstm2").params, seq, False)
    assert last.shape == (3, 128)


@pytest.mark.parametrize("return_sequence", [True, False])
def test_lstm_gradients(rng, backend, return_sequence):
    d, h, L, B = 3, 4, 5, 4
    p = lstm_params(d, h, rng)
    x = rng.normal(size=(L, B, d))
    shape = (L, B, h) if return_sequence else (B, h)
    R = rng.normal(size=shape)

    def loss():
        return float(np.sum(lstm_forward(p, x, return_sequence)[0] * R))

    _, cache = lstm_forward(p, x, return_sequence)
    dx, grads = lstm_backward(p, cache, R)
    for k in ("W", "U", "b"):
        assert rel_error(grads[k], numeric_grad(loss, p[k])) < TOL
    assert rel_error(dx, numeric_grad(loss, x)) < TOL


# -- batch norm -----------------------------------------------------------------

def test_bn_closed_form():
    p = {"gamma": np.ones(1), "beta": np.zeros(1)}
    x = np.array([[1.0], [2.0], [3.0]])
    y, _ = bn_forward(p, x, training=True, epsilon=1e-3)
    np.testing.assert_allclose(y[:, 0], (x[:, 0] - 2) / math.sqrt(2 / 3 + 1e-3), rtol=1e-15)
    assert abs(y.mean()) < 1e-12


def test_bn_gamma_zero(rng):
    p = {"gamma": np.zeros(3), "beta": np.array([1.0, -2.0, 0.5])}
    y, _ = bn_forward(p, rng.normal(size=(6, 3)), training=True)
    np.testing.assert_array_equal(y, np.broadcast_to(p["beta"], (6, 3)))


def test_bn_inference_identity(rng):
    p = {"gamma": np.ones(3), "beta": np.zeros(3)}
    state = {"moving_mean": np.zeros(3), "moving_var": np.ones(3)}
    x = rng.normal(size=(6, 3))
    y, _ = bn_forward(p, x, training=False, state=state, epsilon=1e-3)
    np.testing.assert_allclose(y, x / math.sqrt(1 + 1e-3), rtol=1e-15)


def test_bn_train_statistics(rng):
    p = {"gamma": np.ones(4), "beta": np.zeros(4)}
    x = rng.normal(3.0, 2.0, size=(24, 16, 4))
    state = {"moving_mean": np.zeros(4), "moving_var": np.ones(4)}
    y, (xhat, _, _) = bn_forward(p, x, True, state, epsilon=1e-3, momentum=0.99)
    pooled = x.reshape(-1, 4)
    assert np.max(np.abs(xhat.reshape(-1, 4).mean(axis=0))) <= 1e-6
    # variance before gamma/beta is var/(var+eps); undo the epsilon to compare against 1
    var = pooled.var(axis=0)
    np.testing.assert_allclose(xhat.reshape(-1, 4).var(axis=0) * (var + 1e-3) / var, 1.0, atol=1e-6)
    np.testing.assert_allclose(state["moving_mean"], 0.01 * pooled.mean(axis=0), rtol=1e-12)
    np.testing.assert_allclose(state["moving_var"], 0.99 + 0.01 * var, rtol=1e-12)


def test_bn_degenerate_batch():
    p = {"gamma": np.ones(2), "beta": np.zeros(2)}
    with pytest.raises(DegenerateBatch):
        bn_forward(p, np.ones((1, 2)), training=True)


@pytest.mark.parametrize("shape", [(6, 3), (5, 4, 3)])
@pytest.mark.parametrize("training", [True, False])
def test_bn_gradients(rng, shape, training):
    p = {"gamma": rng.normal(size=3), "beta": rng.normal(size=3)}
    state = {"moving_mean": rng.normal(size=3), "moving_var": rng.uniform(0.5, 2, 3)}
    x = rng.normal(size=shape)
    R = rng.normal(size=shape)

    def loss():
        return float(np.sum(bn_forward(p, x, training, dict(state))[0] * R))

    _, cache = bn_forward(p, x, training, dict(state))
    dx, grads = bn_backward(p, cache, R)
    for k in ("gamma", "beta"):
        assert rel_error(grads[k], numeric_grad(loss, p[k])) < TOL
    assert rel_error(dx, numeric_grad(loss, x)) < TOL


@pytest.mark.parametrize("activation", ["relu", "linear"])
def test_dense_gradients(rng, activation):
    p = {"W": rng.normal(size=(4, 3)), "b": rng.normal(size=3)}
    x = rng.normal(size=(5, 4))
    R = rng.normal(size=(5, 3))

    def loss():
        return float(np.sum(dense_forward(p, x, activation)[0] * R))

    _, cache = dense_forward(p, x, activation)
    dx, grads = dense_backward(p, cache, R)
    for k in ("W", "b"):
        assert rel_error(grads[k], numeric_grad(loss, p[k])) < TOL
    assert rel_error(dx, numeric_grad(loss, x)) < TOL


def test_dropout_gradient(rng):
    x = rng.normal(size=(5, 4))
    R = rng.normal(size=(5, 4))

    def loss():
        return float(np.sum(dropout_forward(x, 0.4, True, np.random.default_rng(3))[0] * R))

    _, keep = dropout_forward(x, 0.4, True, np.random.default_rng(3))
    assert rel_error(dropout_backward(keep, R, 0.4), numeric_grad(loss, x)) < TOL


# -- composed model ---------------------------------------------------------------

def test_layer_order_and_counts():
    m = build_model(ModelConfig(6, 24), seed=0)
    assert tuple(l.name for l in m.layers) == LAYER_NAMES
    counts = {l.name: l.param_count() for l in m.layers}
    assert counts == {
        "lstm1": 69_120, "bn1": 512, "lstm2": 131_584, "bn2": 512, "dense1": 3_870,
        "bn3": 120, "dense2": 930, "bn4": 120, "dropout": 0, "dense3": 31,
    }
    assert param_count(m) == 206_799
    assert lstm_param_count(6, 128) == 69_120
    assert lstm_param_count(5, 128) == 68_608  # the printed count back-solves to d=5
    assert m.layer("bn1").param_count(trainable_only=True) == 256


def test_init_conventions():
    m = build_model(ModelConfig(6, 24, lstm_units=8), seed=0)
    b = m.layer("lstm1").params["b"]
    np.testing.assert_array_equal(b[8:16], 1.0)
    assert np.all(b[:8] == 0) and np.all(b[16:] == 0)
    limit = math.sqrt(6 / (6 + 32))
    assert np.all(np.abs(m.layer("lstm1").params["W"]) <= limit)
    o = build_model(ModelConfig(6, 24, lstm_units=8, recurrent_init="orthogonal"), seed=0)
    U = o.layer("lstm2").params["U"]
    np.testing.assert_allclose(U @ U.T, np.eye(8), atol=1e-12)


def test_build_is_seeded():
    cfg = ModelConfig(3, 5, lstm_units=4, dense_units=5)
    a, b, c = build_model(cfg, 1), build_model(cfg, 1), build_model(cfg, 2)
    for la, lb in zip(a.layers, b.layers):
        for k in la.params:
            np.testing.assert_array_equal(la.params[k], lb.params[k])
    assert not np.array_equal(a.layer("lstm1").params["W"], c.layer("lstm1").params["W"])


def test_forward_contract(rng, tiny_config):
    m = build_model(tiny_config, seed=0)
    x = np.eye(3)[rng.integers(0, 3, (7, 5))]
    before = x.copy()
    p1, _ = m.forward(x)
    p2, _ = m.forward(x)
    assert p1.shape == (7, 1)
    assert np.all(np.isfinite(p1))
    np.testing.assert_array_equal(p1, p2)
    np.testing.assert_array_equal(x, before)
    with pytest.raises(ShapeMismatch):
        m.forward(x[:, :4])


def test_zero_loss_gradient(rng, tiny_config):
    m = build_model(tiny_config, seed=0)
    x = np.eye(3)[rng.integers(0, 3, (4, 5))]
    p, caches = m.forward(x, True, np.random.default_rng(0))
    grads = m.backward(caches, np.zeros_like(p))
    assert all(np.all(g == 0) for layer in grads.values() for g in layer.values())


def test_composed_gradient_check(rng, tiny_config, backend):
    m = build_model(tiny_config, seed=1)
    x = np.eye(3)[rng.integers(0, 3, (4, 5))]
    y = rng.standard_normal((4, 1))

    def loss():
        p, _ = m.forward(x, True, np.random.default_rng(5))
        return float(np.mean((p - y) ** 2))

    p, caches = m.forward(x, True, np.random.default_rng(5))
    grads = m.backward(caches, 2 * (p - y) / p.size)
    worst = 0.0
    for lyr in m.layers:
        for k, v in lyr.params.items():
            worst = max(worst, rel_error(grads[lyr.name][k], numeric_grad(loss, v)))
    assert worst < TOL


def test_frozen_layers_report_no_gradient(rng, tiny_config):
    m = build_model(tiny_config, seed=1)
    for name in ("lstm1", "bn1", "lstm2", "bn2"):
        m.layer(name).trainable = False
    x = np.eye(3)[rng.integers(0, 3, (4, 5))]
    p, caches = m.forward(x, True, np.random.default_rng(0))
    grads = m.backward(caches, np.ones_like(p))
    assert set(grads) == {"dense1", "bn3", "dense2", "bn4", "dense3"}
    # a frozen BN layer runs on its moving statistics and leaves them alone
    assert np.all(m.layer("bn1").state["moving_mean"] == 0)
