"""Hot inner loops: LSTM recurrence (forward/BPTT) and the oracle state chain.

Each kernel has a vectorized numpy implementation and a numba ``@njit``
implementation.  The environment variable ``FLOWCAST_NUMBA`` picks the path:

* ``1`` - every kernel jitted
* ``0`` - pure numpy
* ``auto`` (default) - numba only for BPTT.  The forward recurrence and the
  oracle chain are dominated by ``tanh``; numpy's SIMD ``tanh`` beats numba's
  scalar libm calls unless numba was built with SVML.

``set_backend`` switches at runtime; ``benchmarks/bench_kernels.py`` times both.

Arrays handed to the LSTM kernels are time-major: ``(L, B, ...)``.  Gate order
inside the ``4H`` axis is input, forget, candidate, output.
"""
from __future__ import annotations

import os

import numpy as np

HS_SLOPE = 0.2
HS_SHIFT = 0.5
HS_EDGE = 2.5  # |z| beyond which the hard sigmoid saturates


def _env_backend() -> str:
    flag = os.environ.get("FLOWCAST_NUMBA", "auto").strip().lower()
    if flag in ("0", "false", "no", "off", "numpy"):
        return "numpy"
    if flag in ("1", "true", "yes", "on", "numba"):
        return "numba"
    return "auto"


try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False


# --------------------------------------------------------------------- numpy


def lstm_forward_numpy(xw, U, b):
    """Recurrence given the precomputed input projection ``xw = x @ W``.

    Returns ``(z, a, c, h, tc)``: gate pre-activations and activations
    ``(L, B, 4H)``, cell and hidden states ``(L+1, B, H)`` with index 0 the zero
    initial state, and ``tanh(c)`` ``(L, B, H)``.
    """
    L, B, H4 = xw.shape
    H = H4 // 4
    z = np.empty((L, B, H4))
    a = np.empty((L, B, H4))
    c = np.zeros((L + 1, B, H))
    h = np.zeros((L + 1, B, H))
    tc = np.empty((L, B, H))
    for t in range(L):
        zt = z[t]
        np.add(xw[t], h[t] @ U, out=zt)
        zt += b
        at = a[t]
        np.clip(HS_SLOPE * zt + HS_SHIFT, 0.0, 1.0, out=at)
        np.tanh(zt[:, 2 * H:3 * H], out=at[:, 2 * H:3 * H])
        c[t + 1] = at[:, H:2 * H] * c[t] + at[:, :H] * at[:, 2 * H:3 * H]
        tc[t] = np.tanh(c[t + 1])
        h[t + 1] = at[:, 3 * H:] * tc[t]
    return z, a, c, h, tc


def lstm_backward_numpy(dh_seq, z, a, c, h, tc, U):
    """BPTT.  ``dh_seq`` is dLoss/dh_t for every step ``(L, B, H)``.

    Returns ``(dz, dU)`` where ``dz`` is dLoss/d(pre-activation) ``(L, B, 4H)``.
    """
    L, B, H = dh_seq.shape
    dz = np.empty((L, B, 4 * H))
    dU = np.zeros_like(U)
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    for t in range(L - 1, -1, -1):
        at = a[t]
        zt = z[t]
        i_g = at[:, :H]
        f_g = at[:, H:2 * H]
        g_g = at[:, 2 * H:3 * H]
        o_g = at[:, 3 * H:]
        dh = dh_seq[t] + dh_next
        dc = dc_next + dh * o_g * (1.0 - tc[t] ** 2)
        dzt = dz[t]
        dzt[:, :H] = dc * g_g
        dzt[:, H:2 * H] = dc * c[t]
        dzt[:, 2 * H:3 * H] = dc * i_g * (1.0 - g_g ** 2)
        dzt[:, 3 * H:] = dh * tc[t]
        gate_mask = np.abs(zt) < HS_EDGE
        dzt[:, :2 * H] *= HS_SLOPE * gate_mask[:, :2 * H]
        dzt[:, 3 * H:] *= HS_SLOPE * gate_mask[:, 3 * H:]
        dc_next = dc * f_g
        dU += h[t].T @ dzt
        dh_next = dzt @ U.T
    return dz, dU


def oracle_chain_numpy(steps, s0, A, bias):
    """Run ``s <- tanh(A_k s + b_k)`` over every row of ``steps`` ``(N, L)``."""
    N, L = steps.shape
    s = np.broadcast_to(s0, (N, s0.shape[0])).copy()
    for t in range(L):
        k = steps[:, t]
        s = np.tanh(np.einsum("nij,nj->ni", A[k], s) + bias[k])
    return s


# --------------------------------------------------------------------- numba

if HAVE_NUMBA:

    @numba.njit(cache=True, inline="always")
    def _hs(v):
        v = HS_SLOPE * v + HS_SHIFT
        if v < 0.0:
            return 0.0
        if v > 1.0:
            return 1.0
        return v

    @numba.njit(cache=True)
    def lstm_forward_numba(xw, U, b):
        L, B, H4 = xw.shape
        H = H4 // 4
        z = np.empty((L, B, H4))
        a = np.empty((L, B, H4))
        c = np.zeros((L + 1, B, H))
        h = np.zeros((L + 1, B, H))
        tc = np.empty((L, B, H))
        for t in range(L):
            rec = np.dot(h[t], U)
            zt = z[t]
            at = a[t]
            for r in range(B):
                for j in range(H4):
                    zt[r, j] = xw[t, r, j] + rec[r, j] + b[j]
                for j in range(2 * H):
                    at[r, j] = _hs(zt[r, j])
                for j in range(2 * H, 3 * H):
                    at[r, j] = np.tanh(zt[r, j])
                for j in range(3 * H, H4):
                    at[r, j] = _hs(zt[r, j])
                for j in range(H):
                    cv = at[r, H + j] * c[t, r, j] + at[r, j] * at[r, 2 * H + j]
                    c[t + 1, r, j] = cv
                    tv = np.tanh(cv)
                    tc[t, r, j] = tv
                    h[t + 1, r, j] = at[r, 3 * H + j] * tv
        return z, a, c, h, tc

    @numba.njit(cache=True)
    def lstm_backward_numba(dh_seq, z, a, c, h, tc, U):
        L, B, H = dh_seq.shape
        dz = np.empty((L, B, 4 * H))
        dU = np.zeros_like(U)
        dh_next = np.zeros((B, H))
        dc_next = np.zeros((B, H))
        UT = np.ascontiguousarray(U.T)
        for t in range(L - 1, -1, -1):
            for r in range(B):
                for j in range(H):
                    i_g = a[t, r, j]
                    f_g = a[t, r, H + j]
                    g_g = a[t, r, 2 * H + j]
                    o_g = a[t, r, 3 * H + j]
                    tv = tc[t, r, j]
                    dh = dh_seq[t, r, j] + dh_next[r, j]
                    dc = dc_next[r, j] + dh * o_g * (1.0 - tv * tv)
                    di = dc * g_g
                    df = dc * c[t, r, j]
                    dg = dc * i_g * (1.0 - g_g * g_g)
                    do = dh * tv
                    dz[t, r, j] = di * HS_SLOPE if abs(z[t, r, j]) < HS_EDGE else 0.0
                    dz[t, r, H + j] = df * HS_SLOPE if abs(z[t, r, H + j]) < HS_EDGE else 0.0
                    dz[t, r, 2 * H + j] = dg
                    dz[t, r, 3 * H + j] = do * HS_SLOPE if abs(z[t, r, 3 * H + j]) < HS_EDGE else 0.0
                    dc_next[r, j] = dc * f_g
            dU += np.dot(np.ascontiguousarray(h[t].T), dz[t])
            dh_next = np.dot(dz[t], UT)
        return dz, dU

    @numba.njit(cache=True)
    def oracle_chain_numba(steps, s0, A, bias):
        N, L = steps.shape
        d = s0.shape[0]
        out = np.empty((N, d))
        s = np.empty(d)
        nxt = np.empty(d)
        for r in range(N):
            for i in range(d):
                s[i] = s0[i]
            for t in range(L):
                k = steps[r, t]
                for i in range(d):
                    acc = bias[k, i]
                    for j in range(d):
                        acc += A[k, i, j] * s[j]
                    nxt[i] = np.tanh(acc)
                for i in range(d):
                    s[i] = nxt[i]
            for i in range(d):
                out[r, i] = s[i]
        return out

else:  # pragma: no cover
    lstm_forward_numba = lstm_backward_numba = oracle_chain_numba = None


# ------------------------------------------------------------------ dispatch

_IMPLS = {
    "numpy": (lstm_forward_numpy, lstm_backward_numpy, oracle_chain_numpy),
}
if HAVE_NUMBA:
    _IMPLS["numba"] = (lstm_forward_numba, lstm_backward_numba, oracle_chain_numba)
    _IMPLS["auto"] = (lstm_forward_numpy, lstm_backward_numba, oracle_chain_numpy)

BACKEND = _env_backend() if HAVE_NUMBA else "numpy"


def available_backends() -> list[str]:
    return list(_IMPLS)


def set_backend(name: str) -> str:
    """Select ``"numba"``, ``"numpy"`` or ``"auto"``; returns the previous backend."""
    global BACKEND
    if name not in _IMPLS:
        raise ValueError(f"backend {name!r} unavailable; choose from {available_backends()}")
    prev, BACKEND = BACKEND, name
    return prev


def lstm_forward(xw, U, b):
    return _IMPLS[BACKEND][0](np.ascontiguousarray(xw), np.ascontiguousarray(U), b)


def lstm_backward(dh_seq, z, a, c, h, tc, U):
    return _IMPLS[BACKEND][1](np.ascontiguousarray(dh_seq), z, a, c, h, tc, np.ascontiguousarray(U))


def oracle_chain(steps, s0, A, bias):
    steps = np.ascontiguousarray(steps, dtype=np.int64)
    return _IMPLS[BACKEND][2](steps, s0, np.ascontiguousarray(A), np.ascontiguousarray(bias))
