"""Accuracy metric (100 - mean relative error) and evaluation reports."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataset import Dataset, NormStats, denormalize
from .errors import EmptyInput, NonPositiveTruth, SpecMismatch
from .nn import Model

N_SUBSETS = 4


@dataclass
class EvalReport:
    n_points: int
    mean_relative_error: float
    accuracy: float
    subset_sizes: list[int] = field(default_factory=list)
    subset_errors: list[float] = field(default_factory=list)
    truths: np.ndarray = field(default_factory=lambda: np.zeros(0))
    preds: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def subset_accuracies(self) -> list[float]:
        return [100.0 - e for e in self.subset_errors]

    def summary(self, units: str = "") -> str:
        lines = [
            f"points: {self.n_points}",
            f"mean relative error: {self.mean_relative_error:.6f} %",
            f"accuracy: {self.accuracy:.6f} %",
        ]
        for i, (n, e) in enumerate(zip(self.subset_sizes, self.subset_errors), 1):
            lines.append(f"subset {i}: {n} points, mean relative error {e:.6f} %")
        if units:
            lines.append(f"units: {units}")
        return "\n".join(lines) + "\n"


def relative_errors(preds, truths) -> np.ndarray:
    preds = np.asarray(preds, dtype=np.float64).ravel()
    truths = np.asarray(truths, dtype=np.float64).ravel()
    if truths.size == 0:
        raise EmptyInput("no points to evaluate")
    if preds.shape != truths.shape:
        raise ValueError(f"length mismatch {preds.shape} vs {truths.shape}")
    if np.any(truths <= 0):
        raise NonPositiveTruth("relative error needs strictly positive truths")
    return np.abs(preds - truths) / truths


def accuracy(preds, truths) -> tuple[float, float]:
    """Return ``(mre %, accuracy %)`` with ``accuracy = 100 - mre``."""
    mre = float(np.mean(relative_errors(preds, truths)) * 100.0)
    return mre, 100.0 - mre


def predict_labels(model: Model, dataset: Dataset, stats: NormStats) -> np.ndarray:
    """Inference-mode predictions in label units."""
    if model.config.input_dim != dataset.spec.n or model.config.seq_len != dataset.spec.length:
        raise SpecMismatch("model input shape does not match the dataset's flow spec")
    if model.spec is not None and model.spec != dataset.spec:
        raise SpecMismatch("model was trained on a different flow spec")
    return denormalize(model.predict(dataset.encoded())[:, 0], stats)


def evaluate(model: Model, dataset: Dataset, stats: NormStats, seed=0) -> EvalReport:
    """Overall and per-subset error on a seeded four-way random split."""
    if len(dataset) == 0:
        raise EmptyInput("cannot evaluate an empty dataset")
    preds = predict_labels(model, dataset, stats)
    truths = dataset.labels
    rel = relative_errors(preds, truths)
    order = np.random.default_rng(seed).permutation(len(rel))
    parts = np.array_split(order, N_SUBSETS)
    mre = float(np.mean(rel) * 100.0)
    return EvalReport(
        n_points=len(rel),
        mean_relative_error=mre,
        accuracy=100.0 - mre,
        subset_sizes=[len(p) for p in parts],
        subset_errors=[float(np.mean(rel[p]) * 100.0) if len(p) else float("nan") for p in parts],
        truths=truths.copy(),
        preds=preds,
    )
