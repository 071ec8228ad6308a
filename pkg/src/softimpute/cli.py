"""Command-line front end.

Subcommands
-----------
solve      one penalty weight, factors + a one-row metrics CSV
path       a full lambda grid with warm starts, metrics CSV per grid point
simulate   synthetic instance end to end, train/test error CSV
bench      timing rows over explicit problem cases

Exit codes: 0 on success, 1 on input errors (bad files, bad flags), 2 when
any requested solve stopped at the iteration cap without converging.
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .postprocess import unshrink
from .simulate import SimSpec, generate, save_instance, test_error, train_error
from .solvers import (LambdaGrid, SolveOptions, default_grid, hard_impute,
                      kkt_residual, soft_impute, solve_path, train_rmse,
                      objective)
from .sparse_ops import (LowRankFactors, ObservedMatrix, project_omega,
                         read_matrix_market)

PATH_HEADER = ["lambda", "rank", "nuclear_norm", "objective", "train_rmse",
               "iters", "converged", "kkt_core", "wall_ms"]
SIM_HEADER = ["lambda", "rank", "nuclear_norm", "train_error", "test_error",
              "iters", "wall_ms"]
BENCH_HEADER = ["m", "n", "omega", "true_rank", "snr", "effective_rank",
                "iters", "time_s"]


class _Parser(argparse.ArgumentParser):
    # Flag misuse is an input error; keep it on exit code 1.
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return f"{v:.12g}"
    return str(v)


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _write_factors(z: LowRankFactors, directory: Path):
    directory.mkdir(parents=True, exist_ok=True)
    np.savetxt(directory / "U.tsv", z.U.reshape(z.U.shape[0], -1),
               fmt="%.17g", delimiter="\t")
    np.savetxt(directory / "d.tsv", z.d.reshape(-1, 1),
               fmt="%.17g", delimiter="\t")
    np.savetxt(directory / "V.tsv", z.V.reshape(z.V.shape[0], -1),
               fmt="%.17g", delimiter="\t")


def _parse_snr(text):
    if text.lower() in ("inf", "infinity"):
        return math.inf
    return float(text)


def _solver_options(args):
    return SolveOptions(epsilon=args.epsilon, max_iters=args.max_iters,
                        r_max=args.r_max, seed=args.seed)


def _add_solver_flags(p):
    p.add_argument("--epsilon", type=float, default=1e-4,
                   help="relative-change convergence threshold")
    p.add_argument("--max-iters", type=int, default=500)
    p.add_argument("--r-max", type=int, default=None,
                   help="rank cap (default min(m, n, 500))")
    p.add_argument("--seed", type=int, default=0)


def _add_grid_flags(p):
    g = p.add_mutually_exclusive_group()
    g.add_argument("--lambdas", type=str, default=None,
                   help="comma-separated decreasing penalty weights "
                        "(overrides --K/--ratio)")
    g.add_argument("--K", "--n-lambdas", dest="n_lambdas", type=int,
                   default=20, help="grid size for the automatic "
                                    "geometric grid")
    p.add_argument("--ratio", type=float, default=0.01,
                   help="smallest grid value as a fraction of the largest")


def _resolve_grid(args, x):
    if args.lambdas is not None:
        vals = [float(tok) for tok in args.lambdas.split(",") if tok.strip()]
        return LambdaGrid(np.array(vals))
    return default_grid(x, args.n_lambdas, args.ratio, seed=args.seed)


def _holdout_split(x, frac, seed):
    n_val = int(round(frac * x.nnz))
    if not 1 <= n_val < x.nnz:
        raise ValueError(f"holdout fraction {frac} leaves no usable split")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(x.nnz)
    val_idx, fit_idx = perm[:n_val], perm[n_val:]
    m, n = x.shape
    fit = ObservedMatrix(m, n, x.rows[fit_idx], x.cols[fit_idx],
                         x.vals[fit_idx])
    val = ObservedMatrix(m, n, x.rows[val_idx], x.cols[val_idx],
                         x.vals[val_idx])
    return fit, val


def _path_rows(x_fit, x_val, path, *, seed):
    rows = []
    clean = True
    for entry in path:
        if not entry.ok:
            row = [entry.lam, "", "", "", ""]
            if x_val is not None:
                row.append("")
            row += ["", False, "", ""]
            rows.append(row)
            clean = False
            continue
        z, tr = entry.factors, entry.trace
        row = [entry.lam, z.rank, float(np.sum(z.d)),
               objective(z, x_fit, entry.lam), train_rmse(z, x_fit)]
        if x_val is not None:
            resid = x_val.vals - project_omega(z, x_val)
            row.append(math.sqrt(float(resid @ resid) / x_val.nnz))
        kkt = kkt_residual(z, x_fit, entry.lam, seed=seed)
        row += [tr.iterations, tr.converged, kkt.gap_core,
                sum(r.wall_ms for r in tr.records)]
        rows.append(row)
        clean = clean and tr.converged
    return rows, clean


def _cmd_solve(args):
    x = read_matrix_market(args.input)
    opts = _solver_options(args)
    out = Path(args.output_dir)
    if args.algorithm == "hard":
        if args.rank is not None:
            z, tr = hard_impute(x, rank=args.rank, options=opts)
        else:
            z, tr = hard_impute(x, lam=args.lam, options=opts)
    else:
        if args.lam is None:
            raise ValueError("--lam is required for soft solves")
        z, tr = soft_impute(x, args.lam, options=opts)
    lam = args.lam if args.lam is not None else 0.0
    _write_factors(z, out)
    kkt = kkt_residual(z, x, lam, seed=args.seed)
    _write_csv(out / "solve.csv", PATH_HEADER, [[
        lam, z.rank, float(np.sum(z.d)), objective(z, x, lam),
        train_rmse(z, x), tr.iterations, tr.converged, kkt.gap_core,
        sum(r.wall_ms for r in tr.records)]])
    print(f"rank {z.rank}, objective {objective(z, x, lam):.6g}, "
          f"{'converged' if tr.converged else 'NOT converged'} "
          f"in {tr.iterations} iters")
    return 0 if tr.converged else 2


def _cmd_path(args):
    x = read_matrix_market(args.input)
    opts = _solver_options(args)
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    x_fit, x_val = x, None
    if args.holdout is not None:
        x_fit, x_val = _holdout_split(x, args.holdout, args.seed)
    grid = _resolve_grid(args, x_fit)
    path = solve_path(x_fit, grid, kind=args.algorithm, options=opts)
    header = list(PATH_HEADER)
    if x_val is not None:
        header.insert(5, "val_rmse")
    rows, clean = _path_rows(x_fit, x_val, path, seed=args.seed)
    _write_csv(out / "path.csv", header, rows)
    if not args.no_factors:
        for i, entry in enumerate(path):
            if entry.ok:
                _write_factors(entry.factors, out / f"factors_{i:03d}")
    for entry in path:
        if not entry.ok:
            print(f"lambda={entry.lam:.6g}: {entry.error}", file=sys.stderr)
    print(f"{len(path)} grid points -> {out / 'path.csv'}")
    return 0 if clean else 2


def _cmd_simulate(args):
    snr = math.inf if args.noiseless else _parse_snr(args.snr)
    if args.observed is not None:
        spec = SimSpec.with_observed_count(
            args.rows, args.cols, args.rank, args.observed, snr, args.seed)
    else:
        spec = SimSpec(args.rows, args.cols, args.rank, snr,
                       args.missing_frac, args.seed)
    inst = generate(spec)
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    if args.save_instance:
        save_instance(inst, out / "instance")
    opts = _solver_options(args)
    grid = _resolve_grid(args, inst.observed)
    kind = "hard" if args.algorithm == "hard" else "soft"
    post = args.algorithm == "soft+post"
    path = solve_path(inst.observed, grid, kind=kind, options=opts)
    header = list(SIM_HEADER)
    if post:
        header += ["post_train_error", "post_test_error"]
    rows = []
    clean = True
    for entry in path:
        if not entry.ok:
            row = [entry.lam] + [""] * (len(header) - 1)
            rows.append(row)
            clean = False
            continue
        z, tr = entry.factors, entry.trace
        row = [entry.lam, z.rank, float(np.sum(z.d)),
               train_error(z, inst), test_error(z, inst),
               tr.iterations, sum(r.wall_ms for r in tr.records)]
        if post:
            refit = unshrink(z, inst.observed).factors
            row += [train_error(refit, inst), test_error(refit, inst)]
        rows.append(row)
        clean = clean and tr.converged
    _write_csv(out / "simulate.csv", header, rows)
    print(f"{len(path)} grid points -> {out / 'simulate.csv'}")
    return 0 if clean else 2


def _parse_case(text):
    parts = [tok.strip() for tok in text.split(",")]
    if len(parts) != 5:
        raise ValueError(
            f"case {text!r} must be m,n,observed,rank,snr")
    return (int(parts[0]), int(parts[1]), int(parts[2]), int(parts[3]),
            _parse_snr(parts[4]))


def _estimate_case_gib(m, n, omega, r_max):
    # Rough peak: coordinate arrays + CSR copy, factor iterates (a few
    # copies), and the Lanczos bases at the default Krylov cap.
    r = min(m, n, 500) if r_max is None else min(r_max, m, n)
    lanczos = max(4 * r + 40, 100)
    sparse_bytes = omega * 8 * 5
    factor_bytes = (m + n) * r * 8 * 6
    basis_bytes = (m + n) * lanczos * 8
    return (sparse_bytes + factor_bytes + basis_bytes) / 2 ** 30


def _run_case(case, args, case_seed):
    m, n, omega, rank, snr = case
    spec = SimSpec.with_observed_count(m, n, rank, omega, snr, case_seed)
    inst = generate(spec)
    opts = SolveOptions(epsilon=args.epsilon, max_iters=args.max_iters,
                        r_max=args.r_max, seed=case_seed)
    # Log-spaced grid strictly below the null-model boundary, so every
    # point does real work.
    full = default_grid(inst.observed, args.n_lambdas + 1, args.ratio,
                        seed=case_seed)
    grid = LambdaGrid(full.values[1:])
    t0 = time.perf_counter()
    path = solve_path(inst.observed, grid, kind="soft", options=opts)
    elapsed = time.perf_counter() - t0
    ranks = ",".join(str(e.factors.rank) if e.ok else "?" for e in path)
    iters = ",".join(str(e.trace.iterations) if e.ok else "?" for e in path)
    clean = all(e.ok and e.trace.converged for e in path)
    row = [m, n, omega, rank, snr, f"({ranks})", f"({iters})", elapsed]
    return row, clean


def _cmd_bench(args):
    cases = [_parse_case(c) for c in args.case]
    for case in cases:
        # Surface degenerate rows before any work starts.
        SimSpec.with_observed_count(case[0], case[1], case[3], case[2],
                                    case[4], args.seed)
    keep, skipped = [], []
    for i, case in enumerate(cases):
        est = _estimate_case_gib(case[0], case[1], case[2], args.r_max)
        if args.mem_budget_gb is not None and est > args.mem_budget_gb:
            skipped.append((case, est))
        else:
            keep.append((i, case))
    for case, est in skipped:
        print(f"case {case}: skipped (estimated {est:.2f} GiB exceeds "
              f"budget {args.mem_budget_gb:.2f} GiB)", file=sys.stderr)

    results = {}
    if args.parallel > 1 and len(keep) > 1:
        with ThreadPoolExecutor(max_workers=args.parallel) as pool:
            futs = {pool.submit(_run_case, case, args, args.seed + i): i
                    for i, case in keep}
            for fut, i in futs.items():
                results[i] = fut.result()
    else:
        for i, case in keep:
            results[i] = _run_case(case, args, args.seed + i)

    rows = [results[i][0] for i, _ in keep]
    clean = all(results[i][1] for i, _ in keep)
    _write_csv(args.output, BENCH_HEADER, rows)
    print(f"{len(rows)} case(s) -> {args.output}")
    return 0 if clean else 2


def build_parser():
    parser = _Parser(prog="softimpute",
                     description="Low-rank matrix completion by iterated "
                                 "spectral thresholding")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", parents=[], help="single penalty weight")
    p.add_argument("--input", required=True, help="MatrixMarket file")
    p.add_argument("--output-dir", required=True)
    p.add_argument("--lam", type=float, default=None)
    p.add_argument("--algorithm", choices=("soft", "hard"), default="soft")
    p.add_argument("--rank", type=int, default=None,
                   help="rank target (hard algorithm only)")
    _add_solver_flags(p)
    p.set_defaults(func=_cmd_solve)

    p = sub.add_parser("path", help="warm-started lambda grid")
    p.add_argument("--input", required=True, help="MatrixMarket file")
    p.add_argument("--output-dir", required=True)
    p.add_argument("--algorithm", choices=("soft", "hard"), default="soft")
    p.add_argument("--holdout", type=float, default=None,
                   help="fraction of entries held out for validation RMSE")
    p.add_argument("--no-factors", action="store_true",
                   help="skip writing per-lambda factor files")
    _add_grid_flags(p)
    _add_solver_flags(p)
    p.set_defaults(func=_cmd_path)

    p = sub.add_parser("simulate", help="synthetic instance end to end")
    p.add_argument("--rows", type=int, required=True)
    p.add_argument("--cols", type=int, required=True)
    p.add_argument("--rank", type=int, required=True)
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--missing-frac", type=float,
                   help="fraction of cells hidden, in (0, 1)")
    g.add_argument("--observed", type=int,
                   help="observed-cell count (alternative to --missing-frac)")
    p.add_argument("--snr", type=str, default="1",
                   help="signal-to-noise ratio, or 'inf'")
    p.add_argument("--noiseless", action="store_true")
    p.add_argument("--algorithm", choices=("soft", "soft+post", "hard"),
                   default="soft",
                   help="soft+post adds post_train_error/post_test_error "
                        "columns from the singular-value re-fit")
    p.add_argument("--save-instance", action="store_true")
    p.add_argument("--output-dir", required=True)
    _add_grid_flags(p)
    _add_solver_flags(p)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("bench", help="timing rows over problem cases")
    p.add_argument("--case", action="append", required=True,
                   help="m,n,observed,rank,snr (repeatable)")
    p.add_argument("--output", required=True, help="CSV destination")
    p.add_argument("--n-lambdas", type=int, default=3)
    # Timing cases are typically very sparse, where most of the spectrum
    # sits just below lambda_max; a narrow high sweep keeps the effective
    # ranks small enough to finish in minutes.  Lower at your own risk.
    p.add_argument("--ratio", type=float, default=0.8)
    p.add_argument("--parallel", type=int, default=1)
    p.add_argument("--mem-budget-gb", type=float, default=None)
    _add_solver_flags(p)
    p.set_defaults(func=_cmd_bench)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
