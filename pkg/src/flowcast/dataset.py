"""Datasets of flows with QoR labels: normalization, splits, batching, CSV I/O."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .encoding import encode_batch
from .errors import (
    DegenerateLabels,
    EmptySplit,
    FlowcastError,
    MissingHeader,
    RepetitionMismatch,
    UnknownTransformation,
)
from .flowspace import Flow, FlowSpec, flow_to_string, string_to_flow

CSV_HEADER = ("flow", "delay_ps", "area_um2")
TARGETS = {"delay": "ps", "area": "um2"}


@dataclass(frozen=True, eq=False)
class Dataset:
    """Flows (as an ``(N, L)`` step array) with delay and area labels.

    ``target`` selects which label column ``labels`` returns.  ``dropped``
    records rows rejected while generating or reading the data.
    """

    spec: FlowSpec
    steps: np.ndarray
    delay: np.ndarray
    area: np.ndarray
    target: str = "delay"
    dropped: int = 0

    def __post_init__(self):
        if self.target not in TARGETS:
            raise FlowcastError(f"target must be one of {sorted(TARGETS)}, got {self.target!r}")
        steps = np.asarray(self.steps, dtype=np.int64).reshape(-1, self.spec.length)
        object.__setattr__(self, "steps", steps)
        object.__setattr__(self, "delay", np.asarray(self.delay, dtype=np.float64))
        object.__setattr__(self, "area", np.asarray(self.area, dtype=np.float64))
        if not (len(steps) == len(self.delay) == len(self.area)):
            raise FlowcastError("steps, delay and area must have equal lengths")

    def __len__(self):
        return len(self.steps)

    @property
    def labels(self) -> np.ndarray:
        return self.delay if self.target == "delay" else self.area

    @property
    def units(self) -> str:
        return TARGETS[self.target]

    def flows(self) -> list[Flow]:
        return [Flow(row) for row in self.steps]

    def encoded(self) -> np.ndarray:
        return encode_batch(self.steps, self.spec.n)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return replace(self, steps=self.steps[idx], delay=self.delay[idx],
                       area=self.area[idx], dropped=0)

    def with_target(self, target: str) -> "Dataset":
        return replace(self, target=target)


@dataclass(frozen=True)
class NormStats:
    mean: float
    range: float

    def __post_init__(self):
        if not self.range > 0:
            raise DegenerateLabels(f"label range must be positive, got {self.range}")


def compute_stats(labels) -> NormStats:
    y = np.asarray(labels, dtype=np.float64)
    if y.size == 0:
        raise DegenerateLabels("no labels")
    spread = float(y.max() - y.min())
    if spread <= 0:
        raise DegenerateLabels("labels have zero range")
    return NormStats(float(y.mean()), spread)


def normalize(labels, stats: NormStats) -> np.ndarray:
    return (np.asarray(labels, dtype=np.float64) - stats.mean) / stats.range


def denormalize(y, stats: NormStats):
    return np.asarray(y, dtype=np.float64) * stats.range + stats.mean


def normalize_labels(dataset: Dataset) -> tuple[np.ndarray, NormStats]:
    """Subtract the label mean and divide by the label range."""
    stats = compute_stats(dataset.labels)
    return normalize(dataset.labels, stats), stats


def split(dataset: Dataset, val_fraction: float = 0.2, seed=0) -> tuple[Dataset, Dataset]:
    """Seeded shuffle, then the last ``round(N * val_fraction)`` rows validate."""
    if not 0.0 < val_fraction < 1.0:
        raise ValueError("val_fraction must lie strictly between 0 and 1")
    n = len(dataset)
    n_val = int(round(n * val_fraction))
    if n_val < 1 or n - n_val < 1:
        raise EmptySplit(f"cannot split {n} rows at fraction {val_fraction}")
    order = np.random.default_rng(seed).permutation(n)
    return dataset.subset(order[: n - n_val]), dataset.subset(order[n - n_val:])


def batches(rows, batch_size: int = 256, shuffle: bool = False, seed=0, epoch: int = 0) -> list[np.ndarray]:
    """Index batches over ``rows`` (a count or an index array).

    The shuffle for a given epoch depends only on ``(seed, epoch)``.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    idx = np.arange(rows) if np.isscalar(rows) else np.asarray(rows)
    if shuffle:
        idx = idx[np.random.default_rng([int(seed), int(epoch)]).permutation(len(idx))]
    return [idx[i:i + batch_size] for i in range(0, len(idx), batch_size)]


# ------------------------------------------------------------------------ CSV


def _parse_qor(text: str) -> float | None:
    try:
        value = float(text)
    except ValueError:
        return None
    return value if math.isfinite(value) else None


def read_csv(path, spec: FlowSpec, target: str = "delay") -> Dataset:
    """Read ``flow,delay_ps,area_um2`` rows.

    Lines starting with ``#`` are provenance comments.  Rows whose QoR is
    ``NA`` or otherwise unparsable are skipped; the count lands in
    ``Dataset.dropped``.
    """
    steps, delay, area = [], [], []
    skipped = 0
    header_seen = False
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row or (row[0].startswith("#")):
                continue
            if not header_seen:
                if tuple(c.strip() for c in row) != CSV_HEADER:
                    raise MissingHeader(f"{path}:{lineno}: expected header {','.join(CSV_HEADER)}")
                header_seen = True
                continue
            if len(row) != 3:
                skipped += 1
                continue
            try:
                flow = string_to_flow(row[0], spec)
            except (UnknownTransformation, RepetitionMismatch) as exc:
                raise type(exc)(f"{path}:{lineno}: {exc}") from None
            d, a = _parse_qor(row[1]), _parse_qor(row[2])
            if d is None or a is None:
                skipped += 1
                continue
            steps.append(flow.steps)
            delay.append(d)
            area.append(a)
    if not header_seen:
        raise MissingHeader(f"{path}: no header row")
    arr = np.array(steps, dtype=np.int64).reshape(len(steps), spec.length)
    return Dataset(spec, arr, np.array(delay), np.array(area), target=target, dropped=skipped)


def format_csv(dataset: Dataset, header: Sequence[str] = ()) -> str:
    buf = io.StringIO()
    for line in header:
        buf.write(f"# {line}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for row, d, a in zip(dataset.steps, dataset.delay, dataset.area):
        writer.writerow((flow_to_string(Flow(row), dataset.spec), repr(float(d)), repr(float(a))))
    return buf.getvalue()


def write_csv(dataset: Dataset, path, header: Sequence[str] = ()) -> None:
    from .model_io import atomic_write_text

    atomic_write_text(path, format_csv(dataset, header))
