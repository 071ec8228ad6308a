"""Low-rank matrix completion by iterated spectral thresholding.

Solvers for nuclear-norm and rank-penalized completion of partially observed
matrices, built around a sparse-plus-low-rank representation of the filled
matrix and a Lanczos truncated SVD, so nothing m x n is ever formed.
"""

from .lanczos_svd import (EscalationPolicy, LanczosNonConvergence, SvdRequest,
                          SvdResult, fixed_rank_svd, spectral_norm,
                          svd_above_threshold, truncated_svd)
from .postprocess import UnshrinkResult, unshrink
from .prox import (RankCapError, ThresholdKind, apply_threshold,
                   hard_threshold, rank_truncate, soft_threshold)
from .simulate import (SimInstance, SimSpec, generate, heldout_linear_indices,
                       load_instance, save_instance, test_error, train_error)
from .solvers import (KktResidual, LambdaGrid, PathEntry, PathSolution,
                      SolveOptions, SolveTrace, TraceRecord, default_grid,
                      hard_impute, kkt_residual, objective, soft_impute,
                      solve_path, surrogate_objective, train_rmse)
from .sparse_ops import (LowRankFactors, ObservedMatrix, SparsePlusLowRank,
                         build_iteration_operator, lowrank_diff_norm_sq,
                         lowrank_inner, lowrank_norm_sq,
                         lowrank_only_operator, project_omega,
                         read_matrix_market, sparse_only_operator,
                         write_matrix_market)

__version__ = "0.1.0"

__all__ = [
    "EscalationPolicy", "KktResidual", "LambdaGrid", "LanczosNonConvergence",
    "LowRankFactors", "ObservedMatrix", "PathEntry", "PathSolution",
    "RankCapError", "SimInstance", "SimSpec", "SolveOptions", "SolveTrace",
    "SparsePlusLowRank", "SvdRequest", "SvdResult", "ThresholdKind",
    "TraceRecord",
    "UnshrinkResult", "apply_threshold", "build_iteration_operator",
    "default_grid",
    "fixed_rank_svd", "generate", "hard_impute", "hard_threshold",
    "heldout_linear_indices", "kkt_residual", "load_instance",
    "lowrank_diff_norm_sq", "lowrank_inner", "lowrank_norm_sq",
    "lowrank_only_operator", "objective",
    "project_omega", "rank_truncate", "read_matrix_market", "save_instance",
    "soft_impute", "soft_threshold", "solve_path", "sparse_only_operator",
    "spectral_norm", "surrogate_objective", "test_error", "train_error",
    "train_rmse", "truncated_svd", "unshrink", "write_matrix_market",
]
