"""Trace a full regularization path and watch the bias/variance trade-off.

Training error falls monotonically as lambda shrinks; held-out error dips
and then climbs again once the fit starts chasing noise.  The sweet spot
sits at an interior lambda.
"""

import numpy as np

from softimpute import (SimSpec, default_grid, generate, solve_path,
                        test_error, train_error)


def run_demo():
    # noisy regime: SNR 1, rank 6, 50% missing
    inst = generate(SimSpec(100, 100, 6, 1.0, 0.5, seed=1))
    grid = default_grid(inst.observed, 20, 0.01)
    print(f"grid: {len(grid)} points, lambda from {grid[0]:.3f} "
          f"down to {grid[len(grid) - 1]:.4f}")

    path = solve_path(inst.observed, grid)

    print(f"{'lambda':>9} {'rank':>5} {'iters':>6} "
          f"{'train_err':>10} {'test_err':>9}")
    errs = []
    for entry in path:
        tr_e = train_error(entry.factors, inst)
        te_e = test_error(entry.factors, inst)
        errs.append(te_e)
        print(f"{entry.lam:9.4f} {entry.factors.rank:5d} "
              f"{entry.trace.iterations:6d} {tr_e:10.4f} {te_e:9.4f}")

    best = int(np.argmin(errs))
    print(f"\nbest held-out error {errs[best]:.4f} at "
          f"lambda={path[best].lam:.4f} (grid point {best}); "
          f"the smallest-lambda endpoint scores {errs[-1]:.4f}")


if __name__ == "__main__":
    run_demo()
