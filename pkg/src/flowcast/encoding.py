"""Timed-model one-hot encoding of flows.

``EncodedFlow.matrix`` is ``n x L`` (one row per transformation, one column per
time frame).  The network consumes the transpose, time-major ``L x n``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import MalformedMatrix, ShapeMismatch
from .flowspace import Flow, FlowSpec, validate_flow


@dataclass(frozen=True, eq=False)
class EncodedFlow:
    matrix: np.ndarray
    spec: FlowSpec

    @property
    def time_major(self) -> np.ndarray:
        return self.matrix.T


def encode_timed(flow: Flow, spec: FlowSpec, dtype=np.float64) -> EncodedFlow:
    steps = np.asarray(flow.steps, dtype=np.int64)
    mat = np.zeros((spec.n, len(steps)), dtype=dtype)
    mat[steps, np.arange(len(steps))] = 1
    mat.setflags(write=False)
    return EncodedFlow(mat, spec)


def decode_timed(enc: EncodedFlow) -> Flow:
    mat = np.asarray(enc.matrix)
    if mat.ndim != 2 or mat.shape[0] != enc.spec.n:
        raise MalformedMatrix(f"expected {enc.spec.n} rows, got shape {mat.shape}")
    if not np.all((mat == 0) | (mat == 1)):
        raise MalformedMatrix("entries must be 0 or 1")
    col_sums = mat.sum(axis=0)
    bad = np.flatnonzero(col_sums != 1)
    if bad.size:
        raise MalformedMatrix(f"column {int(bad[0])} sums to {col_sums[bad[0]]}, expected 1")
    return validate_flow(Flow(np.argmax(mat, axis=0)), enc.spec)


def encode_batch(steps: np.ndarray, n: int, dtype=np.float64) -> np.ndarray:
    """Encode a ``(B, L)`` integer step array as a ``(B, L, n)`` one-hot batch."""
    steps = np.asarray(steps)
    if steps.ndim != 2:
        raise ShapeMismatch(f"expected a (batch, length) step array, got shape {steps.shape}")
    return np.eye(n, dtype=dtype)[steps]


def flows_to_array(flows, spec: FlowSpec | None = None) -> np.ndarray:
    arr = np.array([f.steps for f in flows], dtype=np.int64)
    if spec is not None:
        for f in flows:
            validate_flow(f, spec)
    return arr.reshape(len(flows), -1)
