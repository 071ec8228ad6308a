"""Matrix completion by iterated spectral thresholding over observed entries.

The core loop is the same for both penalties: fill the missing cells from the
current iterate, threshold the singular values of the filled matrix, repeat.
With the soft rule each step solves a nuclear-norm-penalized least squares
subproblem exactly, giving monotone descent on

    f(Z) = 0.5 * sum over observed (Z_ij - X_ij)^2 + lambda * ||Z||_*

The filled matrix is handled as sparse plus low rank throughout, so the cost
per iteration is the truncated SVD, never an m x n array.

``solve_path`` chains warm starts down a decreasing lambda grid, which is how
the solver is meant to be used: each solution seeds the next, and the whole
path often costs little more than the hardest single solve.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .lanczos_svd import (EscalationPolicy, LanczosNonConvergence,
                          spectral_norm)
from .prox import RankCapError, hard_threshold, rank_truncate, soft_threshold
from .sparse_ops import (LowRankFactors, ObservedMatrix, SparsePlusLowRank,
                         build_iteration_operator, lowrank_diff_norm_sq,
                         lowrank_norm_sq, project_omega, sparse_only_operator)


@dataclass(frozen=True)
class SolveOptions:
    """Knobs shared by every solver entry point.

    Convergence is declared when the squared relative change
    ||Z_new - Z_old||_F^2 / max(||Z_old||_F^2, 1) drops below ``epsilon``.
    ``r_max`` caps the solution rank (None -> min(m, n, 500)); ``seed`` fixes
    the SVD start vectors so runs are reproducible; ``svd_tol`` is the
    relative residual tolerance of the inner truncated SVDs.
    """

    epsilon: float = 1e-4
    max_iters: int = 500
    r_max: int | None = None
    seed: int = 0
    svd_tol: float = 1e-10

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.r_max is not None and self.r_max < 1:
            raise ValueError("r_max must be at least 1")


@dataclass(frozen=True, eq=False)
class LambdaGrid:
    """Strictly decreasing sequence of positive penalty weights."""

    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64).ravel()
        if vals.size == 0:
            raise ValueError("lambda grid is empty")
        if not np.all(vals > 0):
            raise ValueError("lambda values must be positive")
        if vals.size > 1 and not np.all(np.diff(vals) < 0):
            raise ValueError("lambda values must be strictly decreasing")
        vals = vals.copy()
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def __len__(self):
        return self.values.size

    def __iter__(self):
        return iter(self.values)

    def __getitem__(self, i):
        return self.values[i]


def default_grid(x: ObservedMatrix, n_lambdas: int = 20,
                 ratio: float = 0.01, *, seed: int = 0) -> LambdaGrid:
    """Geometric grid from the null-model boundary down to ``ratio`` of it.

    The first value sits a hair (one part in 1e9) above the largest singular
    value of the observed entries treated as a sparse matrix (zeros
    elsewhere); at that weight the soft rule provably returns the zero
    solution, so the path starts at the null model and relaxes from there.
    """
    if n_lambdas < 1:
        raise ValueError("n_lambdas must be at least 1")
    if not 0 < ratio < 1:
        raise ValueError("ratio must be in (0, 1)")
    lam_max = spectral_norm(sparse_only_operator(x), tol=1e-10, seed=seed)
    if lam_max <= 0:
        raise ValueError("all observed entries are zero; "
                         "no meaningful lambda scale exists")
    # The norm estimate converges from below; nudge past its tolerance so
    # the first grid point cannot leave a stray near-zero singular value.
    lam_max *= 1 + 1e-9
    if n_lambdas == 1:
        return LambdaGrid(np.array([lam_max]))
    expo = np.arange(n_lambdas) / (n_lambdas - 1)
    return LambdaGrid(lam_max * ratio ** expo)


@dataclass(frozen=True)
class TraceRecord:
    """Per-iteration progress snapshot."""

    iteration: int
    objective: float
    surrogate: float
    rank: int
    rel_change: float
    delta_frob: float
    wall_ms: float


@dataclass
class SolveTrace:
    """Full iteration history of one solve."""

    records: list[TraceRecord] = field(default_factory=list)
    converged: bool = False

    @property
    def iterations(self):
        return len(self.records)

    @property
    def final_objective(self):
        return self.records[-1].objective if self.records else math.nan


def objective(z: LowRankFactors, x: ObservedMatrix, lam: float) -> float:
    """0.5 * squared error on the observed entries + lam * nuclear norm.

    The nuclear norm is read off the factors' singular values, so the value
    is exact for the representation the solvers maintain.
    """
    resid = x.vals - project_omega(z, x)
    return 0.5 * float(resid @ resid) + lam * float(np.sum(z.d))


def train_rmse(z: LowRankFactors, x: ObservedMatrix) -> float:
    resid = x.vals - project_omega(z, x)
    return math.sqrt(float(resid @ resid) / x.nnz)


def surrogate_objective(z_new: LowRankFactors, z_old: LowRankFactors,
                        x: ObservedMatrix, lam: float) -> float:
    """Majorizing objective at z_new given the fill-in from z_old.

    This is 0.5 * ||filled(x, z_old) - z_new||_F^2 + lam * ||z_new||_*,
    where filled(x, z_old) agrees with x on the observed entries and with
    z_old elsewhere.  Evaluated via the split

        filled - z_new = [P_obs(x - z_old)] + [z_old - z_new]

    whose first term is sparse and second is low rank, so the cross terms
    reduce to Gram products and a projection onto the support.
    """
    s = x.vals - project_omega(z_old, x)
    cross = float(s @ (project_omega(z_old, x) - project_omega(z_new, x)))
    total = float(s @ s) + 2.0 * cross + lowrank_diff_norm_sq(z_old, z_new)
    return 0.5 * total + lam * float(np.sum(z_new.d))


def _impute_loop(x, step, warm, options):
    opts = options or SolveOptions()
    m, n = x.shape
    z = warm if warm is not None else LowRankFactors.zeros(m, n)
    if z.shape != (m, n):
        raise ValueError(f"warm start shape {z.shape} does not match "
                         f"data shape {(m, n)}")
    trace = SolveTrace()
    for it in range(1, opts.max_iters + 1):
        t0 = time.perf_counter()
        op = build_iteration_operator(x, z)
        policy = EscalationPolicy(start=max(10, z.rank + 2),
                                  r_max=opts.r_max)
        z_new = step(op, policy)
        delta_sq = lowrank_diff_norm_sq(z_new, z)
        base_sq = max(lowrank_norm_sq(z), 1.0)
        ratio_sq = delta_sq / base_sq
        trace.records.append(TraceRecord(
            iteration=it,
            objective=step.objective(z_new, x),
            surrogate=step.surrogate(z_new, z, x),
            rank=z_new.rank,
            rel_change=math.sqrt(ratio_sq),
            delta_frob=math.sqrt(delta_sq),
            wall_ms=(time.perf_counter() - t0) * 1e3))
        z = z_new
        if ratio_sq < opts.epsilon:
            trace.converged = True
            break
    return z, trace


class _SoftStep:
    def __init__(self, lam, opts):
        self.lam = lam
        self.opts = opts

    def __call__(self, op, policy):
        return soft_threshold(op, self.lam, policy=policy,
                              tol=self.opts.svd_tol, seed=self.opts.seed)

    def objective(self, z, x):
        return objective(z, x, self.lam)

    def surrogate(self, z_new, z_old, x):
        return surrogate_objective(z_new, z_old, x, self.lam)


class _HardStep:
    # lam mode uses the d^2 > 2*lam rule; rank mode fixes the kept count.
    def __init__(self, lam, rank, opts):
        self.lam = lam
        self.rank = rank
        self.opts = opts

    def __call__(self, op, policy):
        if self.rank is not None:
            return rank_truncate(op, self.rank, policy=policy,
                                 tol=self.opts.svd_tol, seed=self.opts.seed)
        return hard_threshold(op, self.lam, policy=policy,
                              tol=self.opts.svd_tol, seed=self.opts.seed)

    def objective(self, z, x):
        # Rank penalties charge per kept direction, not per unit of spectrum;
        # report the data-fit term plus lam * rank (0 in rank-target mode).
        resid = x.vals - project_omega(z, x)
        pen = self.lam * z.rank if self.lam is not None else 0.0
        return 0.5 * float(resid @ resid) + pen

    def surrogate(self, z_new, z_old, x):
        s = x.vals - project_omega(z_old, x)
        cross = float(s @ (project_omega(z_old, x) - project_omega(z_new, x)))
        total = (float(s @ s) + 2.0 * cross
                 + lowrank_diff_norm_sq(z_old, z_new))
        pen = self.lam * z_new.rank if self.lam is not None else 0.0
        return 0.5 * total + pen


def soft_impute(x: ObservedMatrix, lam: float,
                warm: LowRankFactors | None = None,
                options: SolveOptions | None = None):
    """Nuclear-norm-penalized completion at a single penalty weight.

    Iterates fill-in followed by singular-value soft thresholding until the
    relative change criterion in ``SolveOptions`` is met.  Returns
    ``(factors, trace)``; ``trace.converged`` is False when the iteration
    cap was reached first.

    Parameters
    ----------
    x : ObservedMatrix
        Observed entries.
    lam : float
        Nuclear-norm weight, nonnegative.
    warm : LowRankFactors, optional
        Starting iterate (default: zero).
    options : SolveOptions, optional
    """
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    opts = options or SolveOptions()
    return _impute_loop(x, _SoftStep(lam, opts), warm, opts)


def hard_impute(x: ObservedMatrix, lam: float | None = None, *,
                rank: int | None = None,
                warm: LowRankFactors | None = None,
                options: SolveOptions | None = None):
    """Rank-penalized completion: fill in, keep top singular values unshrunk.

    Exactly one of ``lam`` (penalty weight, keep d_i^2 > 2 lam) or ``rank``
    (keep exactly that many) must be given.  Unlike the soft rule this
    iteration is not a descent method in general, but warm-started from a
    good iterate it sharpens solutions quickly.  Returns ``(factors, trace)``.
    """
    if (lam is None) == (rank is None):
        raise ValueError("specify exactly one of lam or rank")
    if lam is not None and lam < 0:
        raise ValueError("lambda must be nonnegative")
    if rank is not None and rank < 0:
        raise ValueError("rank must be nonnegative")
    opts = options or SolveOptions()
    return _impute_loop(x, _HardStep(lam, rank, opts), warm, opts)


@dataclass(frozen=True)
class KktResidual:
    """First-order stationarity diagnostics at a candidate solution.

    For the soft rule, Z is optimal iff the scaled residual
    W = (P_obs(X - Z) - lam * U V') / lam satisfies U'W = 0, W V = 0 and
    ||W||_2 <= 1, together with U'(P_obs(X - Z))V = lam * I on the kept
    subspace.  ``gap_core`` is the max-norm defect of that last identity,
    ``gap_orth`` the max-norm of the two orthogonality products, and
    ``spectral_excess`` is max(0, ||W||_2 - 1).  With lam = 0 the scaling
    is undefined; the unscaled gradient products are reported instead and
    ``lambda_zero`` is set.
    """

    gap_core: float
    gap_orth: float
    spectral_excess: float
    lambda_zero: bool = False

    @property
    def max_violation(self):
        return max(self.gap_core, self.gap_orth, self.spectral_excess)


def kkt_residual(z: LowRankFactors, x: ObservedMatrix, lam: float, *,
                 tol: float = 1e-8, seed: int = 0) -> KktResidual:
    """Evaluate the stationarity diagnostics of ``z`` for the soft objective."""
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    g_vals = x.vals - project_omega(z, x)
    g_op = sparse_only_operator(x.with_values(g_vals))
    r = z.rank

    if lam == 0.0:
        if r == 0:
            return KktResidual(0.0, 0.0, 0.0, lambda_zero=True)
        # unscaled gradient products; no subgradient scaling exists
        GV = g_op.matmat(z.V)
        UG = g_op.rmatmat(z.U)
        core = float(np.max(np.abs(z.U.T @ GV)))
        orth = max(float(np.max(np.abs(UG))), float(np.max(np.abs(GV))))
        return KktResidual(core, orth, 0.0, lambda_zero=True)

    if r == 0:
        # Zero is optimal iff the gradient's spectral norm is within lam.
        excess = max(0.0, spectral_norm(g_op, tol=tol, seed=seed) / lam - 1.0)
        return KktResidual(0.0, 0.0, excess)

    GV = g_op.matmat(z.V)
    core = float(np.max(np.abs(z.U.T @ GV - lam * np.eye(r))))

    w_sparse = x.with_values(g_vals / lam)
    w_lr = LowRankFactors(z.U, np.ones(r), -z.V)
    w_op = SparsePlusLowRank(w_sparse, w_lr)
    WV = w_op.matmat(z.V)
    UW = w_op.rmatmat(z.U)
    orth = max(float(np.max(np.abs(UW))), float(np.max(np.abs(WV))))
    excess = max(0.0, spectral_norm(w_op, tol=tol, seed=seed) - 1.0)
    return KktResidual(core, orth, excess)


@dataclass(frozen=True, eq=False)
class PathEntry:
    """Solution at one grid point (or the failure that prevented it)."""

    lam: float
    factors: LowRankFactors | None
    trace: SolveTrace | None
    error: str | None = None

    @property
    def ok(self):
        return self.error is None


@dataclass(frozen=True, eq=False)
class PathSolution:
    """Solutions along a decreasing lambda grid."""

    entries: tuple

    @property
    def lambdas(self):
        return np.array([e.lam for e in self.entries])

    @property
    def all_converged(self):
        return all(e.ok and e.trace.converged for e in self.entries)

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __getitem__(self, i):
        return self.entries[i]


def solve_path(x: ObservedMatrix, grid: LambdaGrid, *, kind: str = "soft",
               options: SolveOptions | None = None,
               warm_starts: list | None = None) -> PathSolution:
    """Solve down a lambda grid, chaining warm starts.

    Each grid point starts from the previous solution (the grids are
    decreasing, so solutions grow gradually in rank).  ``warm_starts`` may
    supply an explicit starting iterate per grid point (None entries fall
    back to the chain); this is how rank-restricted refinement runs are
    seeded from an earlier path.  A grid point that fails (rank cap, SVD
    non-convergence) is recorded with its error and the chain continues
    from the last good iterate.
    """
    if kind not in ("soft", "hard"):
        raise ValueError(f"unknown path kind {kind!r}")
    if warm_starts is not None and len(warm_starts) != len(grid):
        raise ValueError("warm_starts length must match the grid")
    opts = options or SolveOptions()
    entries = []
    carry = None
    for i, lam in enumerate(grid):
        warm = carry
        if warm_starts is not None and warm_starts[i] is not None:
            warm = warm_starts[i]
        try:
            if kind == "soft":
                z, trace = soft_impute(x, lam, warm=warm, options=opts)
            else:
                z, trace = hard_impute(x, lam=lam, warm=warm, options=opts)
        except (RankCapError, LanczosNonConvergence) as exc:
            entries.append(PathEntry(float(lam), None, None, str(exc)))
            continue
        entries.append(PathEntry(float(lam), z, trace))
        carry = z
    return PathSolution(tuple(entries))
