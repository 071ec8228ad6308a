"""Truncated SVD of implicit operators by Golub-Kahan-Lanczos bidiagonalization.

Works on anything exposing matvec/rmatvec (in practice the sparse-plus-low-rank
operator), so the cost per step is two cheap products plus reorthogonalization.
Krylov vectors are kept fully orthonormal: every new vector is reorthogonalized
against the whole stored basis (classical Gram-Schmidt with the
"twice is enough" second pass), which is simpler than selective-orthogonality
bookkeeping and cheap at the target ranks r << min(m, n).

``svd_above_threshold`` wraps the fixed-k solver in an adaptive loop: since a
Krylov solver wants the triplet count up front, the count is grown until the
smallest computed singular value drops below the requested threshold (or the
spectrum, or a hard cap, runs out).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

_REORTH_ETA = 1.0 / math.sqrt(2.0)
# Relative scale below which a new Krylov direction is treated as exhausted.
_BREAKDOWN_REL = 100.0 * np.finfo(np.float64).eps
# Singular values below this (relative to the largest) are numerical zeros;
# the escalation loop stops chasing spectrum beneath it.
_SPECTRUM_FLOOR_REL = 1e-9


@dataclass(frozen=True, eq=False)
class SvdRequest:
    """One truncated-SVD solve: operator, triplet count, and accuracy knobs.

    tol bounds the per-triplet residual norms relative to the largest
    singular value.  max_lanczos_dim caps the Krylov dimension (default
    grows with k and is clamped to min(m, n)).  The start vector is seeded
    uniform in [-1, 1], so identical requests give identical results.
    """

    operator: object
    k: int
    tol: float = 1e-10
    max_lanczos_dim: int | None = None
    seed: int = 0


@dataclass(frozen=True, eq=False)
class SvdResult:
    """Computed triplets plus diagnostics.

    ``factors`` holds the top triplets found (possibly fewer than requested
    when the operator's numerical rank is smaller; then ``exhausted`` is
    set).  ``residuals[i]`` bounds ||W' u_i - d_i v_i||; the other residual
    is zero by construction of the bidiagonalization.  ``cap_hit`` is set by
    the escalation loop when it stopped at the rank cap with spectrum still
    above the threshold.
    """

    factors: object
    residuals: np.ndarray
    iterations: int
    exhausted: bool = False
    cap_hit: bool = False


class LanczosNonConvergence(RuntimeError):
    """Residual tolerance not met within the Krylov-dimension cap.

    Carries the best-so-far decomposition in ``result``.
    """

    def __init__(self, message, result):
        super().__init__(message)
        self.result = result


@dataclass(frozen=True)
class EscalationPolicy:
    """How ``svd_above_threshold`` grows the requested triplet count."""

    start: int = 10
    growth: float = 1.5
    r_max: int | None = None  # None -> min(m, n, 500)

    def __post_init__(self):
        if self.start < 1:
            raise ValueError("start must be at least 1")
        if not self.growth > 1.0:
            raise ValueError("growth must exceed 1")
        if self.r_max is not None and self.r_max < 1:
            raise ValueError("r_max must be at least 1")

    def effective_cap(self, m, n):
        cap = min(m, n, 500) if self.r_max is None else min(self.r_max, m, n)
        return max(cap, 1)


def _reorthogonalize(basis, w):
    # basis: (j, dim) with orthonormal rows. One CGS pass, and a second when
    # the projection removed enough mass to make the result untrustworthy.
    if basis.shape[0] == 0:
        return w
    before = np.linalg.norm(w)
    w = w - basis.T @ (basis @ w)
    if np.linalg.norm(w) < _REORTH_ETA * before:
        w = w - basis.T @ (basis @ w)
    return w


def _sign_fix(U, V):
    # Deterministic orientation: largest-magnitude entry of each u positive.
    if U.shape[1] == 0:
        return U, V
    idx = np.argmax(np.abs(U), axis=0)
    signs = np.sign(U[idx, np.arange(U.shape[1])])
    signs[signs == 0] = 1.0
    return U * signs, V * signs


def _build_bidiagonal(alphas, betas, nu, wide):
    # Square form: diag alphas[0..nu-1], superdiag betas[0..nu-2].
    # Wide form (alpha breakdown): extra column carrying betas[nu-1].
    ncols = nu + 1 if wide else nu
    B = np.zeros((nu, ncols))
    B[np.arange(nu), np.arange(nu)] = alphas[:nu]
    if ncols > 1:
        B[np.arange(ncols - 1), np.arange(1, ncols)] = betas[:ncols - 1]
    return B


def truncated_svd(req: SvdRequest) -> SvdResult:
    """Compute the k largest singular triplets of an implicit operator.

    Returns factors with orthonormal U, V and nonincreasing d, each triplet
    satisfying the residual bound tol * d[0].  Deterministic given the seed.

    Raises
    ------
    LanczosNonConvergence
        If the Krylov dimension cap is reached before the top-k residuals
        meet tol; the exception carries the best-so-far result.
    """
    from .sparse_ops import LowRankFactors

    op = req.operator
    m, n = op.shape
    k = int(req.k)
    if not 1 <= k <= min(m, n):
        raise ValueError(f"k must be in [1, {min(m, n)}], got {k}")
    if not req.tol > 0:
        raise ValueError("tol must be positive")
    maxdim = req.max_lanczos_dim
    if maxdim is None:
        maxdim = max(4 * k + 40, 100)
    maxdim = int(min(max(maxdim, k), min(m, n)))

    rng = np.random.default_rng(req.seed)
    v = rng.uniform(-1.0, 1.0, size=n)
    v /= np.linalg.norm(v)

    Ub = np.empty((maxdim, m))
    Vb = np.empty((maxdim + 1, n))
    Vb[0] = v
    alphas = np.zeros(maxdim)
    betas = np.zeros(maxdim)

    nu = 0          # completed left vectors
    nv = 1          # stored right vectors
    wide = False    # alpha breakdown: B gets a dangling column
    exhausted = False
    anorm = 0.0
    check_at = k

    j = 0
    while j < maxdim:
        w = op.matvec(Vb[j])
        if j > 0:
            w -= betas[j - 1] * Ub[j - 1]
        w = _reorthogonalize(Ub[:j], w)
        alpha = np.linalg.norm(w)
        anorm = max(anorm, alpha)
        if alpha <= _BREAKDOWN_REL * anorm or alpha == 0.0:
            exhausted = True
            wide = j > 0
            break
        alphas[j] = alpha
        Ub[j] = w / alpha
        nu = j + 1

        g = op.rmatvec(Ub[j]) - alpha * Vb[j]
        g = _reorthogonalize(Vb[:j + 1], g)
        beta = np.linalg.norm(g)
        anorm = max(anorm, beta)
        if beta <= _BREAKDOWN_REL * anorm:
            betas[j] = 0.0
            exhausted = True
            j += 1
            break
        betas[j] = beta
        Vb[j + 1] = g / beta
        nv = j + 2
        j += 1

        if j >= check_at and j >= k:
            B = _build_bidiagonal(alphas, betas, j, wide=False)
            P, theta, Qt = np.linalg.svd(B)
            resid = betas[j - 1] * np.abs(P[-1, :])
            if theta[0] > 0 and np.all(resid[:k] <= req.tol * theta[0]):
                break
            check_at = j + max(2, k // 4)

    if nu == 0:
        # Operator annihilates the start vector: numerically the zero matrix.
        return SvdResult(
            factors=LowRankFactors.zeros(m, n),
            residuals=np.zeros(0), iterations=0, exhausted=True)

    if not exhausted and m < n and nu == min(m, n) and nv == nu + 1:
        # Full Krylov dimension on a wide problem: U spans all of R^m, so
        # the rectangular form op = U B V' with the dangling beta column is
        # exact and the whole spectrum is in hand.
        wide = True
        exhausted = True

    B = _build_bidiagonal(alphas, betas, nu, wide=wide)
    P, theta, Qt = np.linalg.svd(B, full_matrices=False)
    Q = Qt.T
    broke_down = exhausted
    if broke_down:
        # The Krylov space is invariant: theta is the complete numerically
        # nonzero spectrum and every residual is exactly zero.
        resid = np.zeros(theta.size)
    else:
        resid = betas[nu - 1] * np.abs(P[-1, :])

    keep = min(k, theta.size)
    # "exhausted" promises the caller that nothing real was cut off; when a
    # breakdown factorization holds more than k nonzero values, truncating
    # to k forfeits that promise.
    exhausted = broke_down and (
        keep == theta.size
        or bool(np.all(theta[keep:] <= _SPECTRUM_FLOOR_REL * theta[0])))
    U = Ub[:nu].T @ P[:, :keep]
    V = Vb[:B.shape[1]].T @ Q[:, :keep]
    U, V = _sign_fix(U, V)
    result = SvdResult(
        factors=LowRankFactors(U, theta[:keep], V),
        residuals=resid[:keep], iterations=nu, exhausted=exhausted)

    if not broke_down and theta[0] > 0 and np.any(
            resid[:keep] > req.tol * theta[0]):
        raise LanczosNonConvergence(
            f"top-{k} residuals not below tol={req.tol:g} within "
            f"Krylov dimension {maxdim}", result)
    return result


def fixed_rank_svd(operator, k, *, tol: float = 1e-10, seed: int = 0,
                   max_lanczos_dim: int | None = None) -> SvdResult:
    """``truncated_svd`` with automatic retry at doubled Krylov caps.

    A run that stalls below its Krylov-dimension cap is rerun with the cap
    doubled (same seed), up to the full min(m, n) where the factorization
    terminates exactly.  Returns fewer than k triplets, with ``exhausted``
    set, when the numerical rank is smaller than k.
    """
    m, n = operator.shape
    maxdim = max_lanczos_dim
    while True:
        try:
            return truncated_svd(SvdRequest(
                operator, k, tol=tol, max_lanczos_dim=maxdim, seed=seed))
        except LanczosNonConvergence:
            used = max(4 * k + 40, 100) if maxdim is None else maxdim
            if used >= min(m, n):
                raise
            maxdim = min(2 * used, min(m, n))


def svd_above_threshold(operator, lam, policy: EscalationPolicy | None = None,
                        *, tol: float = 1e-10, seed: int = 0,
                        max_lanczos_dim: int | None = None) -> SvdResult:
    """All singular triplets above ``lam`` (and typically a few below).

    Grows the requested count per ``policy`` until the smallest computed
    value is <= lam, the spectrum is numerically exhausted, or the count
    reaches the cap.  On return, one of the following holds:

    * the smallest returned singular value is <= max(lam, numerical floor),
    * ``exhausted`` is set (operator rank ran out / values are ~0),
    * the full min(m, n) spectrum was computed, or
    * ``cap_hit`` is set: the cap was reached with values still above lam.

    A Lanczos run that stalls below its Krylov cap is retried with the cap
    doubled rather than propagated, since the adaptive loop exists precisely
    to absorb such under-provisioning.
    """
    if lam < 0:
        raise ValueError("threshold must be nonnegative")
    policy = policy or EscalationPolicy()
    m, n = operator.shape
    cap = policy.effective_cap(m, n)
    k = int(min(max(policy.start, 1), cap))

    while True:
        res = fixed_rank_svd(operator, k, tol=tol, seed=seed,
                             max_lanczos_dim=max_lanczos_dim)
        d = res.factors.d
        if res.exhausted or d.size == 0:
            return res
        floor = _SPECTRUM_FLOOR_REL * d[0]
        if d[-1] <= max(lam, floor):
            if d[-1] <= floor and d[-1] > lam:
                res = replace(res, exhausted=True)
            return res
        if k >= min(m, n):
            return res
        if k >= cap:
            return replace(res, cap_hit=True)
        k = min(max(int(math.ceil(policy.growth * k)), k + 1), cap)


def spectral_norm(operator, *, tol: float = 1e-8, seed: int = 0,
                  max_lanczos_dim: int | None = None) -> float:
    """Largest singular value of an implicit operator (0.0 if numerically zero)."""
    m, n = operator.shape
    dim = max_lanczos_dim
    if dim is None:
        dim = min(min(m, n), 120)
    try:
        res = fixed_rank_svd(operator, 1, tol=tol, seed=seed,
                             max_lanczos_dim=dim)
    except LanczosNonConvergence as exc:
        res = exc.result  # best available estimate; fine for diagnostics
    d = res.factors.d
    return float(d[0]) if d.size else 0.0
