"""Compare the compiled kernels with their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat 3]

Prints the best-of-N time for each kernel and backend, the speed-up, and the
largest disagreement between backends on the same inputs.
"""
import argparse
import time

import numpy as np

from lipbench import kernels
from lipbench.numerics import RandomSource


def best_of(fn, repeat):
    best = float("inf")
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def jacobi_cases(rng):
    for n in (32, 64, 128, 256):
        A = rng.normal(size=(n, n))
        yield f"jacobi_eigh n={n}", (np.ascontiguousarray(A + A.T),)


def nn_cases(rng):
    for n, q, d, metric in ((2000, 500, 2, 1), (2000, 500, 64, 0), (8000, 200, 784, 0)):
        P = rng.random((n, d))
        y = rng.integers(0, 10, n).astype(np.int64)
        Q = rng.random((q, d))
        yield f"nn_query n={n} q={q} d={d} {'linf' if metric else 'l2'}", (P, y, Q, metric, 10)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    backends = kernels.backends()
    if "compiled" not in backends:
        print("compiled extension not built; only the python backend is available")
    rng = RandomSource(2024)
    print(f"{'case':44s} {'python s':>10s} {'compiled s':>11s} {'speed-up':>9s} {'max diff':>10s}")
    for name, fn_name, cases in (("jacobi", "jacobi_eigh", jacobi_cases(rng.split("jacobi"))),
                                 ("nn", "nn_query", nn_cases(rng.split("nn")))):
        for label, case in cases:
            times, outs = {}, {}
            for key, mod in backends.items():
                times[key], outs[key] = best_of(lambda: getattr(mod, fn_name)(*case), args.repeat)
            if "compiled" in times:
                if fn_name == "jacobi_eigh":
                    diff = np.max(np.abs(np.sort(outs["python"][0]) - np.sort(outs["compiled"][0])))
                else:
                    diff = max(float(np.max(np.abs(outs["python"][i] - outs["compiled"][i]))) for i in range(2))
                print(f"{label:44s} {times['python']:10.4f} {times['compiled']:11.4f} "
                      f"{times['python'] / times['compiled']:9.1f} {diff:10.2e}")
            else:
                print(f"{label:44s} {times['python']:10.4f} {'-':>11s}")


if __name__ == "__main__":
    main()
