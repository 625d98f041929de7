"""Compare the compiled kernels with the pure-Python fallback.

    python benchmarks/bench_kernels.py [--repeat 5]

Sizes match the bundled IEEE-30 case (41 branches). Prints the best
per-call time of each backend and the speed-up.
"""
import argparse
import timeit

import numpy as np

from gridcascade import _kernels_py

try:
    from gridcascade import _kernels as _kernels_c
except ImportError:
    _kernels_c = None

N = 41


def workloads(rng):
    M = rng.normal(size=(N + 10, N))
    Q, b = M.T @ M / N, M.T @ rng.normal(size=N + 10) / N
    step = 1.0 / (2 * np.linalg.eigvalsh(Q)[-1])
    x0 = np.full(N, 1.0 / N)
    W = rng.dirichlet(np.ones(N), size=N) * 0.6
    beta = rng.uniform(0.2, 0.4, size=N)
    s0 = np.ones(N, np.int8)
    s0[[3, 17]] = 0
    eps = rng.uniform(0.5, 0.95, size=N)
    S = np.ones((8, N), np.int8)
    for t in range(1, 8):
        S[t] = S[t - 1] & (rng.random(N) > 0.1)
    v = rng.normal(size=N)

    def counts(impl):
        acc = [np.zeros((N, N), np.int64) for _ in range(4)]
        impl.transition_counts(S, *acc)

    return {
        "project_simplex": lambda impl: impl.project_simplex(v),
        "pgd_simplex": lambda impl: impl.pgd_simplex(Q, b, x0, step, 1e-10, 10000),
        "rollout": lambda impl: impl.rollout(W, beta, s0, eps, N, 0.0),
        "transition_counts": counts,
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if _kernels_c is None:
        print("compiled extension not built; only the fallback can be timed")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<20}{'python':>14}{'cython':>14}{'speed-up':>10}")
    for name, fn in workloads(rng).items():
        times = {}
        for label, impl in (("python", _kernels_py), ("cython", _kernels_c)):
            if impl is None:
                continue
            timer = timeit.Timer(lambda: fn(impl))
            n, _ = timer.autorange()
            times[label] = min(timer.repeat(args.repeat, n)) / n
        py, cy = times["python"], times.get("cython")
        cy_txt = f"{cy * 1e6:11.1f} us" if cy else f"{'-':>14}"
        ratio = f"{py / cy:9.1f}x" if cy else f"{'-':>10}"
        print(f"{name:<20}{py * 1e6:11.1f} us{cy_txt}{ratio}")


if __name__ == "__main__":
    main()
