"""From-scratch recurrent regressor: LSTM, batch norm, dense and dropout layers.

Layer stack (top-down)::

    1 LSTM1 (full sequence)   2 BN1   3 LSTM2 (last state)   4 BN2
    5 Dense1 (ReLU)           6 BN3   7 Dense2 (ReLU)        8 BN4
    9 Dropout                10 Dense3 (linear)

Sequence tensors travel between layers time-major, ``(L, B, F)``; the model
entry point accepts batch-major one-hot input ``(B, L, n)``.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import DegenerateBatch, FlowcastError, ShapeMismatch

LAYER_NAMES = (
    "lstm1", "bn1", "lstm2", "bn2", "dense1", "bn3", "dense2", "bn4", "dropout", "dense3",
)


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int
    seq_len: int
    lstm_units: int = 128
    dense_units: int = 30
    out_dim: int = 1
    dropout_rate: float = 0.4
    bn_epsilon: float = 1e-3
    bn_momentum: float = 0.99
    recurrent_init: str = "glorot"

    def __post_init__(self):
        for name in ("input_dim", "seq_len", "lstm_units", "dense_units", "out_dim"):
            if getattr(self, name) < 1:
                raise FlowcastError(f"{name} must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise FlowcastError("dropout_rate must lie in [0, 1)")
        if self.bn_epsilon <= 0 or not 0.0 <= self.bn_momentum < 1.0:
            raise FlowcastError("invalid batch-norm epsilon or momentum")
        if self.recurrent_init not in ("glorot", "orthogonal"):
            raise FlowcastError(f"unknown recurrent_init {self.recurrent_init!r}")


def hard_sigmoid(x):
    """Piecewise-linear sigmoid: ``clip(0.2 x + 0.5, 0, 1)``."""
    return np.clip(0.2 * np.asarray(x, dtype=np.float64) + 0.5, 0.0, 1.0)


def glorot_uniform(rng, fan_in, fan_out, shape=None):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))


def orthogonal(rng, rows, cols):
    flat = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(flat)
    q *= np.sign(np.diag(r))
    return q if rows >= cols else q.T


# ----------------------------------------------------------------- functional


def lstm_forward(params, x, return_sequence=True):
    """Run an LSTM over a time-major sequence ``x`` of shape ``(L, B, d)``.

    Returns ``(out, cache)`` with ``out`` of shape ``(L, B, H)`` or ``(B, H)``.
    """
    W, U, b = params["W"], params["U"], params["b"]
    L, B, d = x.shape
    xw = (x.reshape(L * B, d) @ W).reshape(L, B, -1)
    z, a, c, h, tc = _kernels.lstm_forward(xw, U, b)
    out = h[1:] if return_sequence else h[-1]
    return out, (x, z, a, c, h, tc, return_sequence)


def lstm_backward(params, cache, dout, need_dx=True):
    x, z, a, c, h, tc, return_sequence = cache
    W, U = params["W"], params["U"]
    L, B, d = x.shape
    if return_sequence:
        dh_seq = dout
    else:
        dh_seq = np.zeros((L, B, U.shape[0]))
        dh_seq[-1] = dout
    dz, dU = _kernels.lstm_backward(dh_seq, z, a, c, h, tc, U)
    dz_flat = dz.reshape(L * B, -1)
    grads = {"W": x.reshape(L * B, d).T @ dz_flat, "U": dU, "b": dz_flat.sum(axis=0)}
    dx = (dz_flat @ W.T).reshape(L, B, d) if need_dx else None
    return dx, grads


def bn_forward(params, x, training, state=None, epsilon=1e-3, momentum=0.99):
    """Batch normalization over every axis except the last (features).

    In training mode batch statistics are used and ``state`` (moving mean and
    variance, if given) is updated in place.
    """
    axes = tuple(range(x.ndim - 1))
    gamma, beta = params["gamma"], params["beta"]
    if training:
        if x.shape[-2] < 2:
            raise DegenerateBatch("batch normalization needs at least 2 samples in training mode")
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        if state is not None:
            state["moving_mean"] = momentum * state["moving_mean"] + (1.0 - momentum) * mean
            state["moving_var"] = momentum * state["moving_var"] + (1.0 - momentum) * var
    else:
        mean, var = state["moving_mean"], state["moving_var"]
    inv_std = 1.0 / np.sqrt(var + epsilon)
    xhat = (x - mean) * inv_std
    return gamma * xhat + beta, (xhat, inv_std, training)


def bn_backward(params, cache, dout):
    xhat, inv_std, training = cache
    axes = tuple(range(dout.ndim - 1))
    grads = {"gamma": (dout * xhat).sum(axis=axes), "beta": dout.sum(axis=axes)}
    dxhat = dout * params["gamma"]
    if training:
        count = dout.size // dout.shape[-1]
        dx = inv_std / count * (
            count * dxhat - dxhat.sum(axis=axes) - xhat * (dxhat * xhat).sum(axis=axes)
        )
    else:
        dx = dxhat * inv_std
    return dx, grads


def dense_forward(params, x, activation="linear"):
    pre = x @ params["W"] + params["b"]
    if activation == "relu":
        out = np.maximum(pre, 0.0)
    elif activation == "linear":
        out = pre
    else:
        raise FlowcastError(f"unknown activation {activation!r}")
    return out, (x, pre, activation)


def dense_backward(params, cache, dout, need_dx=True):
    x, pre, activation = cache
    if activation == "relu":
        dout = dout * (pre > 0)
    grads = {"W": x.T @ dout, "b": dout.sum(axis=0)}
    dx = dout @ params["W"].T if need_dx else None
    return dx, grads


def dropout_forward(x, rate=0.4, training=False, rng=None):
    """Inverted dropout: kept units are divided by ``1 - rate``."""
    if not training or rate == 0.0:
        return x, None
    keep = rng.random(x.shape) >= rate
    return np.where(keep, x / (1.0 - rate), 0.0), keep


def dropout_backward(cache, dout, rate):
    if cache is None:
        return dout
    return np.where(cache, dout / (1.0 - rate), 0.0)


# --------------------------------------------------------------------- layers


@dataclass
class Layer:
    name: str
    kind: str
    params: dict[str, np.ndarray] = field(default_factory=dict)
    state: dict[str, np.ndarray] = field(default_factory=dict)
    trainable: bool = True
    options: dict = field(default_factory=dict)

    def param_count(self, trainable_only=False):
        n = sum(p.size for p in self.params.values())
        if trainable_only:
            return n if self.trainable else 0
        return n + sum(s.size for s in self.state.values())


class Model:
    """Ordered layer stack with per-layer trainable flags."""

    def __init__(self, config: ModelConfig, layers: list[Layer]):
        self.config = config
        self.layers = layers
        self.spec = None
        self.target = None
        self.provenance: dict = {}
        self.optimizer_state = None

    def layer(self, name) -> Layer:
        for lyr in self.layers:
            if lyr.name == name:
                return lyr
        raise KeyError(name)

    def copy(self) -> "Model":
        return copy.deepcopy(self)

    def param_count(self, trainable_only=False) -> int:
        return sum(lyr.param_count(trainable_only) for lyr in self.layers)

    def trainable_tensors(self):
        for lyr in self.layers:
            if lyr.trainable:
                for key, value in lyr.params.items():
                    yield (lyr.name, key), value

    def forward(self, x, training=False, rng=None):
        """Predict ``(B, out_dim)`` from one-hot input ``(B, L, n)``.

        Returns ``(predictions, caches)``.  In training mode, batch-norm moving
        statistics of trainable BN layers are updated and dropout draws from
        ``rng``.  Frozen BN layers always run on their moving statistics.
        """
        cfg = self.config
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 3 or x.shape[1:] != (cfg.seq_len, cfg.input_dim):
            raise ShapeMismatch(
                f"expected input (batch, {cfg.seq_len}, {cfg.input_dim}), got {x.shape}"
            )
        out = np.ascontiguousarray(x.transpose(1, 0, 2))
        caches = []
        for lyr in self.layers:
            if lyr.kind == "lstm":
                out, cache = lstm_forward(lyr.params, out, lyr.options["return_sequence"])
            elif lyr.kind == "bn":
                out, cache = bn_forward(
                    lyr.params, out, training and lyr.trainable, lyr.state,
                    cfg.bn_epsilon, cfg.bn_momentum,
                )
            elif lyr.kind == "dense":
                out, cache = dense_forward(lyr.params, out, lyr.options["activation"])
            elif lyr.kind == "dropout":
                out, cache = dropout_forward(out, lyr.options["rate"], training, rng)
            caches.append(cache)
        return out, caches

    def backward(self, caches, dout):
        """Gradients for every trainable tensor, keyed ``{layer: {name: grad}}``.

        Frozen layers pass gradients through but report none of their own;
        propagation stops below the lowest trainable layer.
        """
        grads: dict[str, dict[str, np.ndarray]] = {}
        flags = [lyr.trainable and bool(lyr.params) for lyr in self.layers]
        lowest = next((i for i, f in enumerate(flags) if f), len(flags))
        for idx in range(len(self.layers) - 1, lowest - 1, -1):
            lyr, cache = self.layers[idx], caches[idx]
            need_dx = idx > lowest
            if lyr.kind == "lstm":
                dout, g = lstm_backward(lyr.params, cache, dout, need_dx)
            elif lyr.kind == "bn":
                dout, g = bn_backward(lyr.params, cache, dout)
            elif lyr.kind == "dense":
                dout, g = dense_backward(lyr.params, cache, dout, need_dx)
            else:
                dout, g = dropout_backward(cache, dout, lyr.options["rate"]), {}
            if lyr.trainable and g:
                grads[lyr.name] = g
        return grads

    def predict(self, x, batch_size=4096):
        """Inference-mode predictions, evaluated in fixed-size chunks."""
        x = np.asarray(x)
        parts = [self.forward(x[i:i + batch_size])[0] for i in range(0, len(x), batch_size)]
        if not parts:
            return np.zeros((0, self.config.out_dim))
        return np.concatenate(parts, axis=0)


def _lstm_layer(name, rng, d, h, recurrent_init, return_sequence):
    W = glorot_uniform(rng, d, 4 * h)
    if recurrent_init == "orthogonal":
        U = orthogonal(rng, h, 4 * h)
    else:
        U = glorot_uniform(rng, h, 4 * h)
    b = np.zeros(4 * h)
    b[h:2 * h] = 1.0  # forget gate
    return Layer(name, "lstm", {"W": W, "U": U, "b": b},
                 options={"return_sequence": return_sequence})


def _bn_layer(name, features):
    return Layer(
        name, "bn",
        {"gamma": np.ones(features), "beta": np.zeros(features)},
        {"moving_mean": np.zeros(features), "moving_var": np.ones(features)},
    )


def _dense_layer(name, rng, fan_in, fan_out, activation):
    return Layer(name, "dense",
                 {"W": glorot_uniform(rng, fan_in, fan_out), "b": np.zeros(fan_out)},
                 options={"activation": activation})


def build_model(config: ModelConfig, seed=0) -> Model:
    """Fresh model; ``seed`` may be an int, a ``SeedSequence`` or a ``Generator``."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    h, k = config.lstm_units, config.dense_units
    layers = [
        _lstm_layer("lstm1", rng, config.input_dim, h, config.recurrent_init, True),
        _bn_layer("bn1", h),
        _lstm_layer("lstm2", rng, h, h, config.recurrent_init, False),
        _bn_layer("bn2", h),
        _dense_layer("dense1", rng, h, k, "relu"),
        _bn_layer("bn3", k),
        _dense_layer("dense2", rng, k, k, "relu"),
        _bn_layer("bn4", k),
        Layer("dropout", "dropout", options={"rate": config.dropout_rate}),
        _dense_layer("dense3", rng, k, config.out_dim, "linear"),
    ]
    return Model(config, layers)


def forward(model: Model, batch, training=False, rng=None):
    return model.forward(batch, training, rng)


def backward(model: Model, caches, dloss):
    return model.backward(caches, dloss)


def param_count(model: Model, trainable_only=False) -> int:
    return model.param_count(trainable_only)


def lstm_param_count(d, h):
    return 4 * (h * (d + h) + h)
