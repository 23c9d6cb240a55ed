"""Compare the compiled and numpy kernel backends on representative problem sizes.

Usage: python benchmarks/bench_kernels.py [--n 2000] [--reps 5]
"""

import argparse
import statistics
import time

import numpy as np

from gpmsync import _pykernels
from gpmsync.blockmat import GroupKind
from gpmsync.sgbm import SgbmParams, generate

try:
    from gpmsync import _ckernels
except ImportError:  # extension not built
    _ckernels = None


def _time(fn, reps):
    fn()
    out = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        out.append(time.perf_counter() - t0)
    return statistics.median(out)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=2000)
    ap.add_argument("--K", type=int, default=2)
    ap.add_argument("--d", type=int, default=3)
    ap.add_argument("--reps", type=int, default=5)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    n, K, d = args.n, args.K, args.d
    _, A = generate(SgbmParams.from_log(n, K, GroupKind(d, True), 30.0, 5.0), 0)
    indptr, indices, blocks = A.csr
    Y = rng.standard_normal((n, d, K * d))
    X = rng.standard_normal((n * K, d, d))

    cases = {
        f"svd_batch ({n * K} blocks)": lambda m: m.svd_batch(X),
        f"det_batch ({n * K} blocks)": lambda m: m.det_batch(X),
        f"block_apply_csr ({len(indices)} directed edges)":
            lambda m: m.block_apply_csr(indptr, indices, blocks, Y),
    }
    print(f"{'kernel':48s} {'numpy [ms]':>12s} {'cython [ms]':>12s} {'speedup':>8s}")
    for name, call in cases.items():
        tp = _time(lambda: call(_pykernels), args.reps)
        if _ckernels is None:
            print(f"{name:48s} {1e3 * tp:12.2f} {'n/a':>12s} {'n/a':>8s}")
            continue
        tc = _time(lambda: call(_ckernels), args.reps)
        print(f"{name:48s} {1e3 * tp:12.2f} {1e3 * tc:12.2f} {tp / tc:8.1f}")


if __name__ == "__main__":
    main()
