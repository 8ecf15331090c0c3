"""Compiled vs numpy kernels on desk-scale and long utterances.

    python benchmarks/bench_kernels.py [--number N]

Prints one row per (kernel, size) with the mean time per call and the speedup.
"""
import argparse
import timeit

import numpy as np

from ctcssl import kernels
from ctcssl.ctc import log_softmax


def cases(rng):
    for T, K, L in ((30, 11, 6), (200, 11, 40), (1000, 30, 150)):
        post = log_softmax(rng.normal(size=(T, K)))
        target = np.asarray(rng.integers(1, K, size=L), dtype=np.intp)
        yield f"T={T} K={K} L={L}", post, target


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--number", type=int, default=20, help="calls per timing")
    args = ap.parse_args()
    if kernels.fast is None:
        raise SystemExit("compiled kernels are not built; run `pip install -e . --no-build-isolation` first")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<14}{'size':<22}{'cython ms':>11}{'numpy ms':>11}{'speedup':>9}")
    for label, post, target in cases(rng):
        for name in ("ctc_forward", "ctc_occupancy"):
            times = []
            for impl in (kernels.fast, kernels.slow):
                fn = getattr(impl, name)
                fn(post, target, 0)  # warm-up
                times.append(timeit.timeit(lambda: fn(post, target, 0), number=args.number) / args.number * 1e3)
            print(f"{name:<14}{label:<22}{times[0]:>11.3f}{times[1]:>11.3f}{times[1] / times[0]:>8.1f}x")
    for n in (10, 100, 500):
        ref = np.asarray(rng.integers(0, 10, n), dtype=np.intp)
        hyp = np.asarray(rng.integers(0, 10, n), dtype=np.intp)
        times = [timeit.timeit(lambda: impl.edit_counts(ref, hyp), number=args.number) / args.number * 1e3
                 for impl in (kernels.fast, kernels.slow)]
        print(f"{'edit_counts':<14}{f'n={n}':<22}{times[0]:>11.3f}{times[1]:>11.3f}{times[1] / times[0]:>8.1f}x")


if __name__ == "__main__":
    main()
