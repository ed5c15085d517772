"""Time the numpy and numba kernels side by side.

    python3 benchmarks/bench_kernels.py [--batch 256] [--hidden 32] [--repeat 20]

Prints the median wall time per call for each kernel and backend, then the
backend that ``auto`` picks for each kernel.
"""
from __future__ import annotations

import argparse
import statistics
import time

import numpy as np

from flowcast import _kernels as K


def _median_ms(fn, repeat: int) -> float:
    fn()  # warm-up (and JIT compile)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return 1e3 * statistics.median(times)


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--batch", type=int, default=256)
    ap.add_argument("--hidden", type=int, default=32)
    ap.add_argument("--seq-len", type=int, default=24)
    ap.add_argument("--rows", type=int, default=5000, help="oracle rows")
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args(argv)

    rng = np.random.default_rng(0)
    L, B, H = args.seq_len, args.batch, args.hidden
    xw = rng.normal(size=(L, B, 4 * H))
    U = rng.normal(scale=0.2, size=(H, 4 * H))
    b = rng.normal(size=4 * H)
    fwd = K.lstm_forward_numpy(xw, U, b)
    dh = rng.normal(size=(L, B, H))
    steps = rng.integers(0, 6, size=(args.rows, L))
    s0 = rng.uniform(-1, 1, 8)
    A = rng.uniform(-1, 1, (6, 8, 8)) / np.sqrt(8)
    bias = rng.uniform(-1, 1, (6, 8)) / np.sqrt(8)

    cases = {
        "lstm_forward": lambda impl: impl[0](xw, U, b),
        "lstm_backward": lambda impl: impl[1](dh, *fwd, U),
        "oracle_chain": lambda impl: impl[2](steps, s0, A, bias),
    }
    print(f"L={L} B={B} H={H} oracle rows={args.rows}, median of {args.repeat}")
    print(f"{'kernel':<14} {'numpy ms':>10} {'numba ms':>10} {'speedup':>8}  auto")
    for i, (name, call) in enumerate(cases.items()):
        t_np = _median_ms(lambda: call(K._IMPLS["numpy"]), args.repeat)
        if "numba" not in K._IMPLS:
            print(f"{name:<14} {t_np:>10.2f} {'n/a':>10}")
            continue
        t_nb = _median_ms(lambda: call(K._IMPLS["numba"]), args.repeat)
        auto = "numba" if K._IMPLS["auto"][i] is K._IMPLS["numba"][i] else "numpy"
        print(f"{name:<14} {t_np:>10.2f} {t_nb:>10.2f} {t_np / t_nb:>7.2f}x  {auto}")


if __name__ == "__main__":
    main()
