"""Re-fitting the singular values of a completed matrix on the observed data.

Soft thresholding buys its convexity by shrinking every kept singular value,
which biases the fit.  With the singular vectors held fixed, the bias is
removable by ordinary least squares: regress the observed entries on the
rank-one layers u_i v_i' restricted to the support and replace the shrunk
values with the fitted coefficients.  The design never materializes beyond
(support size) x rank chunks, and only its rank x rank Gram matrix is kept.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .sparse_ops import LowRankFactors, ObservedMatrix, _CHUNK, project_omega

# Gram condition number beyond which the normal equations are solved by
# pseudoinverse and the result is flagged.
_COND_LIMIT = 1e12
_ALPHA_PRUNE_REL = 1e-12


@dataclass(frozen=True, eq=False)
class UnshrinkResult:
    """Outcome of the singular-value re-fit.

    ``factors`` carries the original singular vectors with re-fitted values
    (negatives absorbed by sign flips, layers re-sorted, zeros dropped).
    ``alpha`` is the raw coefficient vector in the input's column order.
    ``ill_conditioned`` marks a rank-deficient design (coefficients then come
    from the minimum-norm solution).
    """

    factors: LowRankFactors
    alpha: np.ndarray
    residual_sse: float
    ill_conditioned: bool = False


def unshrink(z: LowRankFactors, x: ObservedMatrix) -> UnshrinkResult:
    """Least-squares re-fit of ``z``'s singular values on the observed entries.

    Solves min over a of sum over observed (X_ij - sum_i a_i u_i[row] v_i[col])^2
    with the singular vectors of ``z`` fixed, and returns the re-scaled
    factors.  The fit can only reduce the training error of ``z``.
    """
    if z.shape != x.shape:
        raise ValueError(f"dimension mismatch: factors {z.shape}, "
                         f"observed {x.shape}")
    r = z.rank
    if r == 0:
        sse = float(x.vals @ x.vals)
        return UnshrinkResult(z, np.zeros(0), sse)

    gram = np.zeros((r, r))
    rhs = np.zeros(r)
    for start in range(0, x.nnz, _CHUNK):
        stop = min(start + _CHUNK, x.nnz)
        C = z.U[x.rows[start:stop]] * z.V[x.cols[start:stop]]
        gram += C.T @ C
        rhs += C.T @ x.vals[start:stop]

    cond = np.linalg.cond(gram)
    ill = not np.isfinite(cond) or cond > _COND_LIMIT
    if ill:
        alpha = np.linalg.pinv(gram) @ rhs
    else:
        alpha = np.linalg.solve(gram, rhs)

    # Repackage as a valid decomposition: positive values, nonincreasing,
    # sign flips folded into the left vectors.
    mags = np.abs(alpha)
    keep = mags > _ALPHA_PRUNE_REL * (mags.max() if mags.size else 0.0)
    order = np.argsort(-mags[keep], kind="stable")
    idx = np.flatnonzero(keep)[order]
    if idx.size == 0:
        factors = LowRankFactors.zeros(*z.shape)
    else:
        signs = np.where(alpha[idx] < 0, -1.0, 1.0)
        factors = LowRankFactors(z.U[:, idx] * signs, mags[idx],
                                 z.V[:, idx])

    resid = x.vals - project_omega(factors, x)
    sse = float(resid @ resid)
    return UnshrinkResult(factors, alpha, sse, ill)
