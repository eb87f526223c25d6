"""Time the compiled and numpy kernel backends on workload-sized inputs.

Usage: python3 benchmarks/bench_kernels.py [--repeat 5]
"""

import argparse
import timeit

import numpy as np

from gridfrag import kernels


def workloads(rng):
    # population rate: distinct wind values x component offsets
    u = rng.uniform(0, 8, 600)
    v = rng.normal(65, 19.5, 10_000) * 0.2
    # grouped likelihood as evaluated once per sampler step
    x = np.round(rng.lognormal(2.0, 0.4, (600, 1)), 1)
    c = rng.poisson(2.0, 600).astype(float)
    h = rng.integers(1, 400, 600).astype(float)
    a, b = np.array([65.0]), np.array([0.2])
    # predictive pmf over Monte Carlo rates
    lam = rng.gamma(2.0, 5.0, 20_000)
    return {
        "logistic_sum 600x10000": lambda impl: kernels.logistic_sum(u, v, impl=impl),
        "poisson_loglik 600 rows": lambda impl: kernels.poisson_loglik(x, c, h, a, b, 10_000, impl=impl),
        "poisson_mixture_pmf 20000x80": lambda impl: kernels.poisson_mixture_pmf(lam, 80, impl=impl),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(0)
    impls = kernels.implementations()
    print(f"default backend: {kernels.BACKEND}")
    print(f"{'kernel':32s}" + "".join(f"{name:>14s}" for name in impls) + "   speedup")
    for label, fn in workloads(rng).items():
        times = {}
        for name in impls:
            n = max(1, int(0.2 / max(timeit.timeit(lambda: fn(name), number=1), 1e-6)))
            times[name] = min(timeit.repeat(lambda: fn(name), number=n, repeat=args.repeat)) / n
        row = f"{label:32s}" + "".join(f"{times[k] * 1e3:12.3f}ms" for k in impls)
        if "cython" in times:
            row += f"   {times['python'] / times['cython']:6.1f}x"
        print(row)


if __name__ == "__main__":
    main()
