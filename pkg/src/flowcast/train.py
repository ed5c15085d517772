"""MSE loss, Adam and the epoch loop."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .dataset import Dataset, batches, compute_stats, normalize, split
from .errors import EmptyInput, FlowcastError
from .nn import Model

log = logging.getLogger(__name__)

SEED_STREAMS = ("init", "split", "shuffle", "dropout")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 256
    epochs: int = 1000
    val_fraction: float = 0.2
    master_seed: int = 0
    best_val: bool = False

    def __post_init__(self):
        if not self.lr > 0:
            raise FlowcastError("lr must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise FlowcastError("Adam betas must lie in [0, 1)")
        if self.batch_size < 1 or self.epochs < 1:
            raise FlowcastError("batch_size and epochs must be >= 1")
        if not 0 <= self.val_fraction < 1:
            raise FlowcastError("val_fraction must lie in [0, 1)")


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)

    def rows(self):
        for e, tl in enumerate(self.train_loss, 1):
            vl = self.val_loss[e - 1] if self.val_loss else float("nan")
            yield e, tl, vl


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def seed_streams(master_seed: int) -> dict[str, int]:
    """Independent integer seeds for init / split / shuffle / dropout."""
    children = np.random.SeedSequence(int(master_seed)).spawn(len(SEED_STREAMS))
    return {name: int(ss.generate_state(1)[0]) for name, ss in zip(SEED_STREAMS, children)}


def mse(pred, truth) -> float:
    pred, truth = np.asarray(pred, dtype=np.float64), np.asarray(truth, dtype=np.float64)
    if pred.size == 0:
        raise EmptyInput("mse of an empty batch")
    if pred.shape != truth.shape:
        raise FlowcastError(f"shape mismatch {pred.shape} vs {truth.shape}")
    return float(np.mean((pred - truth) ** 2))


def mse_grad(pred, truth) -> np.ndarray:
    pred, truth = np.asarray(pred, dtype=np.float64), np.asarray(truth, dtype=np.float64)
    if pred.size == 0:
        raise EmptyInput("mse of an empty batch")
    return 2.0 * (pred - truth) / pred.size


def adam_step(params: dict, grads: dict, state: AdamState, t: int, config: TrainConfig):
    """One bias-corrected Adam update, in place, for every key present in ``grads``."""
    if t < 1:
        raise FlowcastError("Adam step index starts at 1")
    b1, b2 = config.beta1, config.beta2
    c1, c2 = 1.0 - b1 ** t, 1.0 - b2 ** t
    for key, g in grads.items():
        theta = params[key]
        m = state.m.get(key)
        if m is None:
            m = state.m[key] = np.zeros_like(theta)
            state.v[key] = np.zeros_like(theta)
        v = state.v[key]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        theta -= config.lr * (m / c1) / (np.sqrt(v / c2) + config.adam_eps)
    state.t = t
    return params, state


def _flat_params(model: Model) -> dict:
    return {(lyr.name, k): p for lyr in model.layers for k, p in lyr.params.items()}


def _flat_grads(grads: dict) -> dict:
    return {(lname, k): g for lname, g_layer in grads.items() for k, g in g_layer.items()}


def loss_on(model: Model, x, y) -> float:
    """Inference-mode MSE on already-normalized labels."""
    return mse(model.predict(x)[:, 0], y)


def fit_arrays(model: Model, x, y, config: TrainConfig, x_val=None, y_val=None,
               shuffle_seed=0, dropout_seed=0, state: AdamState | None = None):
    """Epoch loop on encoded inputs ``x`` and normalized labels ``y``."""
    params = _flat_params(model)
    state = state or AdamState()
    drop_rng = np.random.default_rng(dropout_seed)
    history = TrainHistory()
    best = (np.inf, None)
    n = len(x)
    for epoch in range(config.epochs):
        parts = batches(n, config.batch_size, shuffle=True, seed=shuffle_seed, epoch=epoch)
        if len(parts) > 1 and len(parts[-1]) < 2:
            parts[-2:] = [np.concatenate(parts[-2:])]
        total = 0.0
        for idx in parts:
            pred, caches = model.forward(x[idx], training=True, rng=drop_rng)
            target = y[idx][:, None]
            total += mse(pred, target) * len(idx)
            grads = _flat_grads(model.backward(caches, mse_grad(pred, target)))
            adam_step(params, grads, state, state.t + 1, config)
        history.train_loss.append(total / n)
        if x_val is not None:
            vl = loss_on(model, x_val, y_val)
            history.val_loss.append(vl)
            if config.best_val and vl < best[0]:
                best = (vl, model.copy())
        log.debug("epoch %d train %.6g val %s", epoch + 1, history.train_loss[-1],
                  history.val_loss[-1] if history.val_loss else "-")
    if config.best_val and best[1] is not None:
        model.layers = best[1].layers
    return history, state


def train(model: Model, dataset: Dataset, config: TrainConfig = TrainConfig()):
    """Split, normalize on training rows only, then run the epoch loop.

    Returns ``(model, history, stats)``; ``model`` is updated in place.
    With ``val_fraction == 0`` every row trains and no validation loss is kept.
    """
    seeds = seed_streams(config.master_seed)
    if config.val_fraction > 0:
        train_ds, val_ds = split(dataset, config.val_fraction, seeds["split"])
    else:
        train_ds, val_ds = dataset, None
    stats = compute_stats(train_ds.labels)
    x, y = train_ds.encoded(), normalize(train_ds.labels, stats)
    x_val = y_val = None
    if val_ds is not None:
        x_val, y_val = val_ds.encoded(), normalize(val_ds.labels, stats)
    history, state = fit_arrays(
        model, x, y, config, x_val, y_val,
        shuffle_seed=seeds["shuffle"], dropout_seed=seeds["dropout"],
    )
    model.spec = dataset.spec
    model.target = dataset.target
    model.optimizer_state = state
    model.provenance.update({
        "master_seed": config.master_seed,
        "epochs": config.epochs,
        "train_rows": len(train_ds),
        "val_rows": 0 if val_ds is None else len(val_ds),
    })
    return model, history, stats
