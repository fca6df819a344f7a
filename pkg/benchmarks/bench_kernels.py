"""Time the fixed-point product with the numba kernel against the numpy path.

    python3 benchmarks/bench_kernels.py [--repeat 20]

Both backends must return identical arrays; the script stops if they
don't. The first numba call (compilation or cache load) is timed
separately.
"""

import argparse
import time

import numpy as np

from hybridattn import _kernels


def bench(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    if not _kernels.HAVE_NUMBA:
        raise SystemExit("numba is not importable")
    rng = np.random.default_rng(args.seed)
    shift, lim = 8, (1 << 15) - 1
    prev = _kernels.backend()
    try:
        _kernels.set_backend("numba")
        t0 = time.perf_counter()
        _kernels.fixed_matmul(np.ones((2, 2), np.int64), np.ones((2, 2), np.int64), shift, lim)
        print(f"numba first call: {time.perf_counter() - t0:.3f}s")
        print(f"{'shape':>18} {'numpy ms':>10} {'numba ms':>10} {'speedup':>8}")
        for n, m, w in ((64, 64, 16), (256, 256, 32), (1024, 256, 64), (1024, 1024, 64)):
            a = rng.integers(-lim, lim + 1, size=(n, w), dtype=np.int64)
            b = rng.integers(-lim, lim + 1, size=(m, w), dtype=np.int64)
            times = {}
            outs = {}
            for name in ("numpy", "numba"):
                _kernels.set_backend(name)
                outs[name] = _kernels.fixed_matmul(a, b, shift, lim)
                times[name] = bench(lambda: _kernels.fixed_matmul(a, b, shift, lim), args.repeat)
            if not np.array_equal(outs["numpy"], outs["numba"]):
                raise SystemExit(f"backends disagree at shape {(n, m, w)}")
            label = f"{n}x{w} @ {m}x{w}"
            print(f"{label:>18} {times['numpy'] * 1e3:10.2f} {times['numba'] * 1e3:10.2f} {times['numpy'] / times['numba']:8.1f}")
    finally:
        _kernels.set_backend(prev)


if __name__ == "__main__":
    main()
