"""Spectral thresholding of implicit operators.

Two rules over the same machinery: soft thresholding shrinks every singular
value by lambda and drops the ones that hit zero (the proximal map of the
nuclear norm), hard thresholding keeps values unshrunk but only while
d_i^2 > 2 * lambda (the proximal map of the rank penalty).  A rank-targeted
variant of the hard rule keeps exactly q values, which is the natural knob
when the desired rank is known rather than implied by a penalty weight.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .lanczos_svd import (EscalationPolicy, SvdResult, fixed_rank_svd,
                          svd_above_threshold)
from .sparse_ops import LowRankFactors

# Shrunken values below this fraction of the leading one are pruned outright;
# keeping them would only carry rounding noise into the factors.
_PRUNE_REL = 1e-12


class RankCapError(RuntimeError):
    """Spectrum above the threshold exceeded the rank cap."""


@dataclass(frozen=True)
class ThresholdKind:
    """A thresholding rule with its penalty weight.

    ``kind`` is "soft" (shrink by lam, drop zeros) or "hard" (keep values
    with d^2 > 2 * lam unshrunk).  Use ``apply_threshold`` to dispatch.
    """

    kind: str
    lam: float

    def __post_init__(self):
        if self.kind not in ("soft", "hard"):
            raise ValueError(f"unknown threshold kind {self.kind!r}")
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")

    @classmethod
    def soft(cls, lam):
        return cls("soft", lam)

    @classmethod
    def hard(cls, lam):
        return cls("hard", lam)


def apply_threshold(operator, rule: ThresholdKind, *,
                    policy: EscalationPolicy | None = None,
                    tol: float = 1e-10, seed: int = 0) -> LowRankFactors:
    """Apply ``rule`` to the operator's spectrum."""
    fn = soft_threshold if rule.kind == "soft" else hard_threshold
    return fn(operator, rule.lam, policy=policy, tol=tol, seed=seed)


def _truncate(res: SvdResult, keep: int, vals: np.ndarray) -> LowRankFactors:
    if keep == 0:
        m = res.factors.U.shape[0]
        n = res.factors.V.shape[0]
        return LowRankFactors.zeros(m, n)
    return LowRankFactors(res.factors.U[:, :keep], vals[:keep],
                          res.factors.V[:, :keep])


def soft_threshold(operator, lam, *, policy: EscalationPolicy | None = None,
                   tol: float = 1e-10, seed: int = 0) -> LowRankFactors:
    """Apply singular-value soft thresholding at level ``lam``.

    Keeps triplets with d_i > lam, with values shrunk to d_i - lam.  Shrunken
    values that are negligible next to the leading one are pruned.  lam = 0
    reduces to the best numerical low-rank approximation the escalation
    finds (rank capped; values below the noise floor dropped).

    Raises RankCapError when the spectrum above lam is wider than the rank
    cap allows; raise the cap (policy r_max) to proceed.
    """
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    res = svd_above_threshold(operator, lam, policy, tol=tol, seed=seed)
    if res.cap_hit:
        raise RankCapError(
            f"singular values above lambda={lam:g} still present at the rank "
            f"cap ({res.factors.rank}); increase r_max")
    d = res.factors.d
    shrunk = d - lam
    keep = int(np.sum(shrunk > 0))
    if keep:
        lead = shrunk[0]
        keep = int(np.sum(shrunk[:keep] > _PRUNE_REL * lead))
    return _truncate(res, keep, shrunk)


def hard_threshold(operator, lam, *, policy: EscalationPolicy | None = None,
                   tol: float = 1e-10, seed: int = 0) -> LowRankFactors:
    """Apply singular-value hard thresholding with penalty weight ``lam``.

    Keeps triplets with d_i^2 > 2 * lam (values unshrunk); ties at exactly
    2 * lam are dropped.  Same cap behavior as ``soft_threshold``.
    """
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    cut = math.sqrt(2.0 * lam)
    res = svd_above_threshold(operator, cut, policy, tol=tol, seed=seed)
    if res.cap_hit:
        raise RankCapError(
            f"singular values above sqrt(2*lambda)={cut:g} still present at "
            f"the rank cap ({res.factors.rank}); increase r_max")
    d = res.factors.d
    keep = int(np.sum(d * d > 2.0 * lam))
    return _truncate(res, keep, d)


def rank_truncate(operator, q, *, policy: EscalationPolicy | None = None,
                  tol: float = 1e-10, seed: int = 0) -> LowRankFactors:
    """Best rank-q approximation: keep the q largest triplets unshrunk.

    The rank-targeted form of the hard rule.  Returns fewer than q triplets
    only when the operator's numerical rank is smaller.
    """
    if q < 0:
        raise ValueError("rank target must be nonnegative")
    m, n = operator.shape
    if q == 0:
        return LowRankFactors.zeros(m, n)
    q = int(min(q, m, n))
    policy = policy or EscalationPolicy()
    if policy.effective_cap(m, n) < q:
        raise RankCapError(
            f"rank target {q} exceeds the rank cap "
            f"{policy.effective_cap(m, n)}; increase r_max")
    res = fixed_rank_svd(operator, q, tol=tol, seed=seed)
    d = res.factors.d
    keep = q
    if d.size and d[-1] <= 1e-9 * d[0]:
        keep = int(np.sum(d > 1e-9 * d[0]))
    keep = min(keep, d.size)
    return _truncate(res, keep, d)
