"""Time the numba and numpy flavours of each hot loop side by side.

    python benchmarks/bench_kernels.py [--repeat 5] [--n 200000]

Each kernel is called once untimed so compilation stays out of the numbers,
then the best of ``--repeat`` wall-clock runs is reported.
"""

import argparse
import math
import time

import numpy as np

from coarsegrain import kernels as K


def best_of(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(n, rng):
    x = rng.standard_normal(n)
    y = rng.standard_normal(n)
    resp = rng.standard_normal((3, n))
    lags = np.array([0, 10, 100, 1000], dtype=np.int64)
    kappas = np.full(4, 0.2)
    shifts = np.zeros(4)
    pair_x = x[:2000]
    lo, n_bins = x.min(), 4096
    dx = (x.max() - lo) / (n_bins - 1)
    counts = K.linear_binning_numpy(x, lo, dx, n_bins)
    autocorr = np.correlate(counts, counts, "full")[n_bins - 1:]
    z = rng.standard_normal(n)
    s0 = np.ones(4)
    n_bath = 200
    k, m = rng.uniform(0.1, 1.0, n_bath), rng.uniform(0.1, 1.0, n_bath)
    q0, p0 = rng.standard_normal(n_bath), rng.standard_normal(n_bath)
    coeffs = np.array([0.0, -1.0, 0.0, 1.0])
    steps = max(n // 100, 100)
    return {
        "kernel_sums": lambda f: f(x, y, 0.1, 0.2, 0.0),
        "lag_sums_direct": lambda f: f(x, resp, 0.1, kappas, lags, shifts),
        "direct_pair_sum": lambda f: f(pair_x, 0.3),
        "linear_binning": lambda f: f(x, lo, dx, n_bins),
        "binned_pair_sum": lambda f: f(autocorr, dx, 0.05),
        "langevin": lambda f: f(0.0, 1e-3, 2.0, 1.0, 0.1, z),
        "lorenz_rk4": lambda f: f(s0, 1e-3, steps, 1 / 3, 2 / 45, 0.1, 1),
        "kac_zwanzig": lambda f: f(1.0, 0.0, q0, p0, k, m, 1e-3, steps, coeffs),
        "kicked": lambda f: f(0.0, 0.0, 0.3, 1.0, math.sqrt(0.1), 10, 0.01, n),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=200_000, help="sample count for the vector kernels")
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    rng = np.random.default_rng(0)
    print(f"{'kernel':<18}{'numba [s]':>12}{'numpy [s]':>12}{'speed-up':>10}")
    for name, call in cases(args.n, rng).items():
        fast = best_of(lambda: call(getattr(K, name + "_numba")), args.repeat)
        slow = best_of(lambda: call(getattr(K, name + "_numpy")), args.repeat)
        print(f"{name:<18}{fast:>12.4g}{slow:>12.4g}{slow / fast:>10.1f}")


if __name__ == "__main__":
    main()
