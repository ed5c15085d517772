"""Transfer learning across technologies: layer freezing, fine-tuning, baselines."""
from __future__ import annotations

import enum
from dataclasses import replace

import numpy as np

from .dataset import Dataset
from .errors import FlowcastError, InsufficientPoints
from .nn import Model, ModelConfig, build_model
from .train import TrainConfig, seed_streams, train

RECURRENT_BLOCK = ("lstm1", "bn1", "lstm2", "bn2")
STANDARD_KS = (5, 10, 25, 50, 100)
FINE_TUNE_EPOCHS = 200


class TransferStrategy(str, enum.Enum):
    DENSE_ONLY = "dense_only"
    ALL_LAYERS = "all_layers"

    @classmethod
    def parse(cls, value) -> "TransferStrategy":
        if isinstance(value, cls):
            return value
        aliases = {"dense": cls.DENSE_ONLY, "dense_only": cls.DENSE_ONLY,
                   "all": cls.ALL_LAYERS, "all_layers": cls.ALL_LAYERS}
        try:
            return aliases[str(value).lower()]
        except KeyError:
            raise FlowcastError(f"unknown transfer strategy {value!r}") from None


def fine_tune_config(base: TrainConfig | None = None, epochs: int = FINE_TUNE_EPOCHS,
                     seed: int | None = None) -> TrainConfig:
    """Training settings for few-point runs: no validation hold-out."""
    base = base or TrainConfig()
    return replace(base, epochs=epochs, val_fraction=0.0,
                   master_seed=base.master_seed if seed is None else seed)


def freeze(model: Model, strategy) -> Model:
    """Copy of ``model`` with trainable flags set per strategy; weights untouched."""
    strategy = TransferStrategy.parse(strategy)
    out = model.copy()
    for lyr in out.layers:
        lyr.trainable = not (strategy is TransferStrategy.DENSE_ONLY and lyr.name in RECURRENT_BLOCK)
    return out


def take_points(points: Dataset, k: int, seed) -> Dataset:
    """First ``k`` rows of a seeded shuffle of ``points``."""
    if k < 2 or k > len(points):
        raise InsufficientPoints(f"need 2 <= k <= {len(points)}, got k={k}")
    order = np.random.default_rng(seed).permutation(len(points))
    return points.subset(order[:k])


def fine_tune(pretrained: Model, new_points: Dataset, k: int, strategy, config: TrainConfig | None = None):
    """Update a pre-trained model with ``k`` points of the new technology.

    Label statistics are recomputed on the ``k`` points.  Returns
    ``(model, history, stats)``; ``pretrained`` is not modified.
    """
    config = config or fine_tune_config()
    chosen = take_points(new_points, k, seed_streams(config.master_seed)["split"])
    model = freeze(pretrained, strategy)
    model.provenance = dict(pretrained.provenance, transfer_strategy=TransferStrategy.parse(strategy).value,
                            transfer_k=k)
    return train(model, chosen, config)


def scratch_baseline(new_points: Dataset, k: int, config: TrainConfig | None = None,
                     model_config: ModelConfig | None = None):
    """Same protocol as ``fine_tune(all_layers)`` from a fresh initialization."""
    config = config or fine_tune_config()
    model_config = model_config or ModelConfig(input_dim=new_points.spec.n,
                                               seq_len=new_points.spec.length)
    chosen = take_points(new_points, k, seed_streams(config.master_seed)["split"])
    model = build_model(model_config, seed_streams(config.master_seed)["init"])
    model.provenance = {"transfer_strategy": "scratch", "transfer_k": k}
    return train(model, chosen, config)
