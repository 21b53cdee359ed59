"""Compare the compiled kernels with the numpy fallback.

Usage: python3 benchmarks/bench_kernels.py [--repeat 20]

Times each kernel on simulation-sized inputs plus one full logistic fit, and
checks that both backends agree numerically.
"""
import argparse
import timeit

import numpy as np

from excursion_kit import _fallback, kernels
from excursion_kit.nuisance import fit_logistic


def _inputs(n_rows=3000, d=4, n_groups=100, seed=0):
    rng = np.random.default_rng(seed)
    X = np.column_stack([np.ones(n_rows), rng.standard_normal((n_rows, d - 1))])
    y = (rng.random(n_rows) < 0.4).astype(float)
    w = np.ones(n_rows)
    beta = rng.normal(0, 0.3, d)
    starts = np.linspace(0, n_rows, n_groups + 1).astype(np.int64)
    v = rng.lognormal(0, 0.5, n_rows)
    return X, y, w, beta, starts, v


def bench(repeat):
    try:
        from excursion_kit import _core
    except ImportError:
        print("compiled extension not built; only the fallback is available")
        return
    X, y, w, beta, starts, v = _inputs()
    cases = {
        "logistic_terms": lambda m: m.logistic_terms(X, y, w, beta, 1e-6),
        "grouped_cumprod": lambda m: m.grouped_cumprod(v, starts),
        "group_sums": lambda m: m.group_sums(v, starts),
        "clamp": lambda m: m.clamp(v, 0.5, 2.0),
    }
    print(f"{'kernel':<18}{'python (us)':>14}{'cython (us)':>14}{'speedup':>10}")
    for name, fn in cases.items():
        a, b = fn(_fallback), fn(_core)
        for x, z in zip(a if isinstance(a, tuple) else (a,), b if isinstance(b, tuple) else (b,)):
            np.testing.assert_allclose(x, z, rtol=1e-10, atol=1e-12)
        t_py = min(timeit.repeat(lambda: fn(_fallback), number=20, repeat=repeat)) / 20 * 1e6
        t_cy = min(timeit.repeat(lambda: fn(_core), number=20, repeat=repeat)) / 20 * 1e6
        print(f"{name:<18}{t_py:>14.1f}{t_cy:>14.1f}{t_py / t_cy:>10.2f}")

    def full_fit():
        fit_logistic(X, y)
    timings = {}
    for backend in ("python", "cython"):
        kernels.use_backend(backend)
        timings[backend] = min(timeit.repeat(full_fit, number=10, repeat=repeat)) / 10 * 1e6
    kernels.use_backend("cython")
    print(f"{'fit_logistic':<18}{timings['python']:>14.1f}{timings['cython']:>14.1f}"
          f"{timings['python'] / timings['cython']:>10.2f}")


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    bench(ap.parse_args().repeat)
