"""Synthetic low-rank completion instances and their error metrics.

The generator draws a random rank-r matrix as U V' with iid standard normal
factors, hides a uniform random fraction of the entries, and adds iid
Gaussian noise scaled to a requested signal-to-noise ratio.  Entries of U V'
have population variance r, so noise with standard deviation sqrt(r) / snr
gives var(signal) / var(noise) = snr^2; the realized ratio is also reported.

Everything stays factored: the truth is carried as an exact SVD, the test
error on the unobserved entries is evaluated through norm identities on the
factors, and only the observed entries ever exist as explicit coordinates.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .sparse_ops import (LowRankFactors, ObservedMatrix, lowrank_diff_norm_sq,
                         lowrank_norm_sq, project_omega, read_matrix_market,
                         write_matrix_market)

# Above this element count the generator refuses to build dense index sets.
_DENSE_INDEX_LIMIT = 10_000_000


@dataclass(frozen=True)
class SimSpec:
    """Parameters of one synthetic instance.

    ``missing_frac`` is the fraction of cells hidden; round((1 - p) * m * n)
    cells are observed.  ``snr`` may be ``math.inf`` for a noiseless
    instance.  The same spec (including seed) regenerates the identical
    instance.
    """

    n_rows: int
    n_cols: int
    true_rank: int
    snr: float
    missing_frac: float
    seed: int = 0

    def __post_init__(self):
        if self.n_rows < 1 or self.n_cols < 1:
            raise ValueError("matrix dimensions must be positive")
        if not 1 <= self.true_rank <= min(self.n_rows, self.n_cols):
            raise ValueError("true_rank must be in [1, min(m, n)]")
        if not 0 < self.missing_frac < 1:
            raise ValueError("missing_frac must be in (0, 1)")
        if not self.snr > 0:
            raise ValueError("snr must be positive (math.inf for noiseless)")
        if self.n_observed < 1:
            raise ValueError("missing_frac leaves no observed entries")

    @property
    def n_observed(self):
        return int(round((1.0 - self.missing_frac)
                         * self.n_rows * self.n_cols))

    @classmethod
    def with_observed_count(cls, n_rows, n_cols, true_rank, n_observed, snr,
                            seed=0):
        """Spec with the observed count given directly."""
        total = n_rows * n_cols
        if not 1 <= n_observed < total:
            raise ValueError(f"n_observed must be in [1, {total})")
        spec = cls(n_rows, n_cols, true_rank, snr,
                   (total - n_observed) / total, seed)
        if spec.n_observed != n_observed:
            raise ValueError(f"count {n_observed} is not representable as a "
                             f"missing fraction at these dimensions")
        return spec


@dataclass(frozen=True, eq=False)
class SimInstance:
    """A generated instance: noisy observations plus the factored truth."""

    spec: SimSpec
    observed: ObservedMatrix
    truth_factors: LowRankFactors
    noise_std: float
    realized_snr: float


def _sample_support(rng, m, n, count):
    # Uniform distinct linear indices without building the full index range
    # unless the matrix is small and the sample is dense in it.
    total = m * n
    if total <= _DENSE_INDEX_LIMIT and count > total // 2:
        lin = np.sort(rng.permutation(total)[:count].astype(np.int64))
    else:
        pool = np.empty(0, dtype=np.int64)
        while pool.size < count:
            need = count - pool.size
            draw = rng.integers(0, total, size=need + need // 4 + 16,
                                dtype=np.int64)
            pool = np.unique(np.concatenate([pool, draw]))
        lin = np.sort(rng.permutation(pool)[:count])
    return (lin // n).astype(np.int64), (lin % n).astype(np.int64)


def generate(spec: SimSpec) -> SimInstance:
    """Draw the instance described by ``spec``.

    The truth is returned as an exact SVD of U V' (QR of each factor, then
    an SVD of the small core), never as a dense matrix.
    """
    m, n, r = spec.n_rows, spec.n_cols, spec.true_rank
    rng = np.random.default_rng(spec.seed)

    U = rng.standard_normal((m, r))
    V = rng.standard_normal((n, r))
    Qu, Ru = np.linalg.qr(U)
    Qv, Rv = np.linalg.qr(V)
    P, d, Qt = np.linalg.svd(Ru @ Rv.T)
    truth = LowRankFactors(Qu @ P, d, Qv @ Qt.T)

    rows, cols = _sample_support(rng, m, n, spec.n_observed)
    support = ObservedMatrix(m, n, rows, cols, np.zeros(rows.size))
    clean = project_omega(truth, support)

    noise_std = 0.0 if math.isinf(spec.snr) else math.sqrt(r) / spec.snr
    vals = clean
    if noise_std > 0:
        vals = clean + noise_std * rng.standard_normal(rows.size)
    observed = support.with_values(vals)

    total = m * n
    mean = float(truth.U.sum(axis=0) @ (truth.d * truth.V.sum(axis=0))) / total
    var_signal = max(lowrank_norm_sq(truth) / total - mean * mean, 0.0)
    realized = math.inf if noise_std == 0 else math.sqrt(var_signal) / noise_std
    return SimInstance(spec, observed, truth, noise_std, realized)


def train_error(z: LowRankFactors, inst: SimInstance) -> float:
    """Relative squared error against the noisy observations."""
    vals = inst.observed.vals
    denom = float(vals @ vals)
    if denom == 0:
        raise ValueError("observed entries are all zero")
    resid = vals - project_omega(z, inst.observed)
    return float(resid @ resid) / denom


def test_error(z: LowRankFactors, inst: SimInstance) -> float:
    """Relative squared error against the noiseless truth off the support.

    Evaluated as (||T - Z||_F^2 - ||P_obs(T - Z)||^2) over the same quantity
    at Z = 0, so the unobserved entries are never enumerated.  Equals 1.0
    exactly at Z = 0 and 0.0 at Z = truth.
    """
    truth = inst.truth_factors
    if z is truth:
        return 0.0
    t_obs = project_omega(truth, inst.observed)
    denom = lowrank_norm_sq(truth) - float(t_obs @ t_obs)
    if denom <= 0:
        raise ValueError("no unobserved signal to test against "
                         "(support covers the matrix)")
    diff = t_obs - project_omega(z, inst.observed)
    num = lowrank_diff_norm_sq(truth, z) - float(diff @ diff)
    return max(num, 0.0) / denom


def heldout_linear_indices(inst: SimInstance) -> np.ndarray:
    """Linear indices of the unobserved cells (small instances only)."""
    m, n = inst.spec.n_rows, inst.spec.n_cols
    total = m * n
    if total > _DENSE_INDEX_LIMIT:
        raise ValueError(
            f"matrix has {total} cells; enumerating the complement would "
            f"materialize them all (limit {_DENSE_INDEX_LIMIT})")
    obs = inst.observed.rows.astype(np.int64) * n + inst.observed.cols
    mask = np.ones(total, dtype=bool)
    mask[obs] = False
    return np.flatnonzero(mask)


def save_instance(inst: SimInstance, directory) -> None:
    """Write the instance to ``directory``.

    Layout: ``observed.mtx`` (coordinate format), ``truth.npz`` (factor
    arrays), ``instance.json`` (spec fields plus realized noise figures).
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_matrix_market(directory / "observed.mtx", inst.observed,
                        comment="synthetic low-rank completion instance")
    np.savez(directory / "truth.npz", U=inst.truth_factors.U,
             d=inst.truth_factors.d, V=inst.truth_factors.V)
    meta = {
        "m": inst.spec.n_rows,
        "n": inst.spec.n_cols,
        "r": inst.spec.true_rank,
        "snr": inst.spec.snr,
        "p": inst.spec.missing_frac,
        "seed": inst.spec.seed,
        "n_observed": inst.spec.n_observed,
        "noise_std": inst.noise_std,
        "realized_snr": inst.realized_snr,
    }
    (directory / "instance.json").write_text(json.dumps(meta, indent=2) + "\n")


def load_instance(directory) -> SimInstance:
    """Read back an instance written by ``save_instance``."""
    directory = Path(directory)
    meta = json.loads((directory / "instance.json").read_text())
    spec = SimSpec(meta["m"], meta["n"], meta["r"], meta["snr"],
                   meta["p"], meta["seed"])
    observed = read_matrix_market(directory / "observed.mtx")
    with np.load(directory / "truth.npz") as data:
        truth = LowRankFactors(data["U"], data["d"], data["V"])
    return SimInstance(spec, observed, truth,
                       meta["noise_std"], meta["realized_snr"])
