import numpy as np
import pytest

from flowcast.encoding import EncodedFlow, decode_timed, encode_batch, encode_timed, flows_to_array
from flowcast.errors import MalformedMatrix, RepetitionMismatch
from flowcast.flowspace import Flow, FlowSpec, default_spec, sample_flow, string_to_flow

# the 24-step example flow and the row order in which its matrix is printed
TABLE2_FLOW = "b;rf;rwz;rw;rs;rfz;b;rw;rwz;rf;rs;rfz;b;rw;rwz;rw;rs;rfz;b;rf;rwz;rfz;rs;rf"
TABLE2_ROWS = ("rw", "rwz", "b", "rs", "rfz", "rf")
# shaded (1-based) time frames of each row, transcribed from the printed matrix
TABLE2_CELLS = {
    "rw": (4, 8, 14, 16),
    "rwz": (3, 9, 15, 21),
    "b": (1, 7, 13, 19),
    "rs": (5, 11, 17, 23),
    "rfz": (6, 12, 18, 22),
    "rf": (2, 10, 20, 24),
}


def test_resyn_matrix():
    spec = FlowSpec(("b", "rw", "rwz"), (3, 1, 2))
    enc = encode_timed(string_to_flow("b;rw;rwz;b;rwz;b", spec), spec)
    expected = np.array([
        [1, 0, 0, 1, 0, 1],
        [0, 1, 0, 0, 0, 0],
        [0, 0, 1, 0, 1, 0],
    ], dtype=float)
    np.testing.assert_array_equal(enc.matrix, expected)
    assert enc.time_major.shape == (6, 3)


def test_table2_matrix():
    spec = FlowSpec(TABLE2_ROWS, (4,) * 6)
    enc = encode_timed(string_to_flow(TABLE2_FLOW, spec), spec)
    expected = np.zeros((6, 24))
    for row, name in enumerate(TABLE2_ROWS):
        for t in TABLE2_CELLS[name]:
            expected[row, t - 1] = 1
    np.testing.assert_array_equal(enc.matrix, expected)
    np.testing.assert_array_equal(enc.matrix.sum(axis=0), np.ones(24))
    np.testing.assert_array_equal(enc.matrix.sum(axis=1), np.full(6, 4))


def test_single_step():
    spec = FlowSpec(("b",), (1,))
    enc = encode_timed(Flow((0,)), spec)
    np.testing.assert_array_equal(enc.matrix, [[1.0]])
    assert decode_timed(EncodedFlow(np.array([[1.0]]), spec)) == Flow((0,))


def test_malformed_matrices():
    spec = FlowSpec(("a", "b"), (1, 1))
    with pytest.raises(MalformedMatrix):
        decode_timed(EncodedFlow(np.array([[1.0, 0.0], [0.0, 0.0]]), spec))
    with pytest.raises(MalformedMatrix):
        decode_timed(EncodedFlow(np.array([[1.0, 1.0], [0.0, 1.0]]), spec))
    with pytest.raises(MalformedMatrix):
        decode_timed(EncodedFlow(np.array([[0.5, 0.0], [0.5, 1.0]]), spec))
    with pytest.raises(RepetitionMismatch):
        decode_timed(EncodedFlow(np.array([[1.0, 1.0], [0.0, 0.0]]), spec))


def test_roundtrip_random_specs(rng):
    for _ in range(10_000):
        n = int(rng.integers(1, 9))
        reps = rng.integers(0, 5, size=n)
        if reps.sum() == 0 or reps.sum() > 32:
            continue
        spec = FlowSpec(tuple(f"t{i}" for i in range(n)), tuple(reps))
        flow = sample_flow(spec, rng)
        enc = encode_timed(flow, spec)
        assert enc.matrix.sum() == spec.length
        assert decode_timed(enc) == flow


def test_batch_matches_single(rng):
    spec = default_spec()
    flows = [sample_flow(spec, rng) for _ in range(7)]
    batch = encode_batch(flows_to_array(flows, spec), spec.n)
    assert batch.shape == (7, 24, 6)
    for b, f in zip(batch, flows):
        np.testing.assert_array_equal(b, encode_timed(f, spec).time_major)
