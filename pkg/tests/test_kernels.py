"""The numpy and numba kernels must agree; the env flag must pick the backend."""
import os
import subprocess
import sys

import numpy as np
import pytest

from flowcast import _kernels as K

pytestmark = pytest.mark.skipif(not K.HAVE_NUMBA, reason="numba not installed")


@pytest.fixture
def lstm_inputs(rng):
    L, B, H = 7, 5, 6
    xw = rng.normal(size=(L, B, 4 * H))
    U = rng.normal(scale=0.3, size=(H, 4 * H))
    b = rng.normal(size=4 * H)
    return xw, U, b


def test_forward_agrees(lstm_inputs):
    ref = K.lstm_forward_numpy(*lstm_inputs)
    got = K.lstm_forward_numba(*lstm_inputs)
    for r, g in zip(ref, got):
        np.testing.assert_allclose(g, r, rtol=1e-13, atol=1e-15)


def test_backward_agrees(lstm_inputs, rng):
    xw, U, b = lstm_inputs
    fwd = K.lstm_forward_numpy(xw, U, b)
    dh = rng.normal(size=fwd[3][1:].shape)
    dz_ref, dU_ref = K.lstm_backward_numpy(dh, *fwd, U)
    dz, dU = K.lstm_backward_numba(dh, *fwd, U)
    np.testing.assert_allclose(dz, dz_ref, rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(dU, dU_ref, rtol=1e-12, atol=1e-14)


def test_oracle_chain_agrees(rng):
    steps = rng.integers(0, 4, size=(50, 9))
    s0 = rng.uniform(-1, 1, 5)
    A = rng.uniform(-1, 1, (4, 5, 5))
    bias = rng.uniform(-1, 1, (4, 5))
    np.testing.assert_allclose(K.oracle_chain_numba(steps, s0, A, bias),
                               K.oracle_chain_numpy(steps, s0, A, bias), rtol=1e-13, atol=1e-15)


def test_set_backend():
    prev = K.set_backend("numpy")
    try:
        assert K.BACKEND == "numpy"
        with pytest.raises(ValueError):
            K.set_backend("fortran")
    finally:
        K.set_backend(prev)


@pytest.mark.parametrize("flag,expected", [("0", "numpy"), ("1", "numba"), ("auto", "auto"), ("", "auto")])
def test_env_flag(flag, expected):
    env = dict(os.environ, FLOWCAST_NUMBA=flag)
    out = subprocess.run([sys.executable, "-c", "from flowcast import _kernels; print(_kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == expected
