"""Compare the compiled and numpy kernel backends on LOF-sized workloads.

Usage: python3 benchmarks/bench_kernels.py [--reps N]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from oodkit._kernels import available_backends


def _best(fn, reps: int) -> float:
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--reps", type=int, default=3)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    ref = rng.normal(size=(1400, 20))
    # one SHAP explanation of a LOF score evaluates about 2e5 query rows
    query = rng.normal(size=(20_000, 20))
    a, b = rng.normal(size=5000), rng.normal(0.5, 1.0, size=5000)
    backends = available_backends()
    if "cython" not in backends:
        print("compiled extension not built; only the python backend is available")

    print(f"{'kernel':<28}{'backend':<10}{'seconds':>10}")
    results = {}
    for name, mod in backends.items():
        cases = {
            "knn 20000x1400 d=20 k=5": lambda: mod.knn(ref, query, 5),
            "knn self 1400x1400 k=5": lambda: mod.knn(ref, ref, 5, exclude_self=True),
            "pair_counts 5000x5000": lambda: mod.pair_counts(a, b),
        }
        for case, fn in cases.items():
            results[(case, name)] = _best(fn, args.reps)
            print(f"{case:<28}{name:<10}{results[(case, name)]:>10.4f}")
    if "cython" in backends:
        for case in dict.fromkeys(c for c, _ in results):
            ratio = results[(case, "python")] / results[(case, "cython")]
            print(f"speedup {case}: {ratio:.1f}x")


if __name__ == "__main__":
    main()
