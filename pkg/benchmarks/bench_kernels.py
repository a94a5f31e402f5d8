"""Compare the numba kernels with their numpy counterparts.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Each row reports the best wall time of ``repeat`` runs. The numba column is
skipped when numba is unavailable or disabled with ``MPFEST_DISABLE_NUMBA``.
"""

import argparse
import time

import numpy as np

from mpfest import kernels
from mpfest.simgen import rk4_matrix
from mpfest.symmetry import KDTree


def best_of(fn, repeat):
    fn()  # warm-up (jit compilation)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(rng):
    n = 10
    A = rng.normal(size=(n, n)) / np.sqrt(n) - 1.5 * np.eye(n)
    M = rk4_matrix(A, 1e-3)
    x0 = rng.normal(size=n)
    steps = 20000
    yield (
        f"propagate n={n} steps={steps}",
        lambda: kernels._propagate_jit(M, x0, steps, 1e12),
        lambda: kernels.propagate_numpy(M, x0, steps),
    )

    P = rng.normal(size=(100_000, 6))
    Q = rng.normal(size=(2000, 6))
    tree = KDTree(P)
    allowed = np.ones(P.shape[0], bool)
    excl = np.full(Q.shape[0], -1, np.int64)
    rank = np.arange(P.shape[0], dtype=np.int64)
    yield (
        "nearest 2000 queries / 1e5 points (numba vs scipy tree)",
        lambda: kernels._kd_nearest_batch_jit(
            tree.data, tree.perm, tree.start, tree.stop, tree.left, tree.right,
            tree.box_lo, tree.box_hi, Q, allowed, excl, rank),
        lambda: kernels.nearest_ckdtree(tree.ckdtree(), P, Q, allowed, excl, rank),
    )


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(args.seed)
    print(f"numba available: {kernels.HAVE_NUMBA}")
    print(f"{'kernel':55s} {'numba [s]':>11s} {'numpy [s]':>11s} {'speedup':>8s}")
    for name, fast, slow in cases(rng):
        t_slow = best_of(slow, args.repeat)
        if kernels.HAVE_NUMBA:
            t_fast = best_of(fast, args.repeat)
            print(f"{name:55s} {t_fast:11.4f} {t_slow:11.4f} {t_slow / t_fast:8.1f}")
        else:
            print(f"{name:55s} {'-':>11s} {t_slow:11.4f} {'-':>8s}")


if __name__ == "__main__":
    main()
