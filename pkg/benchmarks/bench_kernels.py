"""Compare the numba and numpy exemplar kernels.

    python benchmarks/bench_kernels.py [--batch 256] [--exemplars 800] [--dims 64]

Reports the median wall time per call of the batch exemplar kernel (with and
without the squared-difference moments used by the gradient) and the largest
output discrepancy between the two backends.
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from catfit.kernels import backend_module


def bench(fn, repeat: int) -> float:
    fn()  # compile / warm caches
    return float(np.median(timeit.repeat(fn, number=1, repeat=repeat)))


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--batch", type=int, default=256)
    ap.add_argument("--exemplars", type=int, default=800)
    ap.add_argument("--dims", type=int, default=64)
    ap.add_argument("--repeat", type=int, default=30)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    Y = rng.normal(size=(args.batch, args.dims))
    X = rng.normal(size=(args.exemplars, args.dims))
    w = rng.dirichlet(np.ones(args.dims))
    beta = 4.0

    numpy_k = backend_module("numpy")
    try:
        numba_k = backend_module("numba")
    except ImportError:
        numba_k = None
        print("numba not installed; timing numpy only")

    print(f"batch={args.batch} exemplars={args.exemplars} dims={args.dims}")
    ref = numpy_k.exemplar_side(Y, X, w, beta, True)
    for label, need_sq in (("logsumexp + moments", True), ("logsumexp only", False)):
        t_np = bench(lambda: numpy_k.exemplar_side(Y, X, w, beta, need_sq), args.repeat)
        line = f"{label:<22} numpy {t_np * 1e3:8.3f} ms"
        if numba_k is not None:
            t_nb = bench(lambda: numba_k.exemplar_side(Y, X, w, beta, need_sq), args.repeat)
            line += f"   numba {t_nb * 1e3:8.3f} ms   speedup {t_np / t_nb:5.2f}x"
        print(line)
    if numba_k is not None:
        out = numba_k.exemplar_side(Y, X, w, beta, True)
        print(f"max |lse diff| {np.max(np.abs(out[0] - ref[0])):.2e}"
              f"   max |sq diff| {np.max(np.abs(out[1] - ref[1])):.2e}")


if __name__ == "__main__":
    main()
