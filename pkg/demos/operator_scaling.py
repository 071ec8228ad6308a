"""Show that the iteration operator never densifies.

One solver step works with X represented as (sparse residual) + (low-rank
iterate).  A matvec costs O(nnz) + O((m+n)r), so doubling the observed
count roughly doubles the sparse part only, and growing the matrix area at
fixed nnz barely moves the needle.  A dense 20000x20000 iterate would need
3.2 GB; these operators hold a few MB.
"""

import time

import numpy as np

from softimpute import LowRankFactors, ObservedMatrix, build_iteration_operator


def make_operator(m, n, nnz, r, seed):
    rng = np.random.default_rng(seed)
    lin = np.unique(rng.integers(0, m * n, size=int(nnz * 1.3),
                                 dtype=np.int64))[:nnz]
    x = ObservedMatrix(m, n, lin // n, lin % n, rng.standard_normal(nnz))
    u, _ = np.linalg.qr(rng.standard_normal((m, r)))
    v, _ = np.linalg.qr(rng.standard_normal((n, r)))
    z = LowRankFactors(u, np.sort(rng.uniform(0.5, 2.0, r))[::-1], v)
    return build_iteration_operator(x, z)


def matvec_ms(op, reps=11):
    v = np.random.default_rng(0).standard_normal(op.shape[1])
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        op.matvec(v)
        times.append(time.perf_counter() - t0)
    return float(np.median(times)) * 1e3


def run_demo():
    m = n = 20_000
    r = 10
    print(f"{'m':>7} {'n':>7} {'nnz':>8} {'matvec_ms':>10}")
    base = None
    for nnz in (100_000, 200_000, 400_000):
        ms = matvec_ms(make_operator(m, n, nnz, r, seed=0))
        note = "" if base is None else f"  ({ms / base:.2f}x the base)"
        base = base or ms
        print(f"{m:7d} {n:7d} {nnz:8d} {ms:10.3f}{note}")

    small = matvec_ms(make_operator(10_000, 10_000, 200_000, r, seed=0))
    big = matvec_ms(make_operator(20_000, 20_000, 200_000, r, seed=0))
    print(f"\nfixed nnz=200000, area x4: {small:.3f} ms -> {big:.3f} ms "
          f"({big / small:.2f}x, far below 4x)")


if __name__ == "__main__":
    run_demo()
