import numpy as np
import pytest

from flowcast.flowspace import FlowSpec
from flowcast.nn import ModelConfig


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_spec():
    return FlowSpec(("a", "b", "c"), (2, 2, 1))


@pytest.fixture
def tiny_config():
    # the tiny configuration used for gradient checks
    return ModelConfig(input_dim=3, seq_len=5, lstm_units=4, dense_units=5, dropout_rate=0.4)


# one line per acceptance criterion, repeated at the end of the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
