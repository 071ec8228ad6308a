"""Dense reference oracles and instance builders shared by the tests.

Everything here goes through plain dense numpy linear algebra on a
materialized matrix.  None of it touches the library's Lanczos engine or
factored-form arithmetic, so oracle agreement is evidence, not tautology.
"""

import numpy as np

from softimpute import (LowRankFactors, ObservedMatrix,
                        build_iteration_operator, sparse_only_operator)


def dense_of_observed(x):
    """Materialize P_obs(X): observed values, zeros elsewhere."""
    a = np.zeros(x.shape)
    a[x.rows, x.cols] = x.vals
    return a


def dense_of_factors(z):
    if z.rank == 0:
        return np.zeros(z.shape)
    return (z.U * z.d) @ z.V.T


def dense_of_operator(op):
    return dense_of_observed(op.sparse_support) + dense_of_factors(op.lowrank)


def dense_svd_values(a):
    return np.linalg.svd(a, compute_uv=False)


def dense_soft_threshold(a, lam):
    """U (d - lam)_+ V' computed by a full dense SVD."""
    u, d, vt = np.linalg.svd(a, full_matrices=False)
    shrunk = np.maximum(d - lam, 0.0)
    return (u * shrunk) @ vt


def dense_hard_threshold(a, lam):
    """Keep singular values with d^2 > 2 lam, unshrunk; ties dropped."""
    u, d, vt = np.linalg.svd(a, full_matrices=False)
    kept = np.where(d * d > 2.0 * lam, d, 0.0)
    return (u * kept) @ vt


def dense_nuclear_norm(a):
    return float(np.sum(dense_svd_values(a)))


def dense_soft_objective(z_dense, x, lam):
    """0.5 ||P_obs(Z - X)||^2 + lam ||Z||_* via dense SVD."""
    resid = z_dense[x.rows, x.cols] - x.vals
    return 0.5 * float(resid @ resid) + lam * dense_nuclear_norm(z_dense)


def random_dense(m, n, seed):
    return np.random.default_rng(seed).standard_normal((m, n))


def fully_observed(a):
    """Wrap a dense matrix as an ObservedMatrix covering every cell."""
    m, n = a.shape
    rows, cols = np.indices((m, n))
    return ObservedMatrix(m, n, rows.ravel(), cols.ravel(), a.ravel())


def operator_of_dense(a):
    return sparse_only_operator(fully_observed(a))


def random_support(m, n, count, seed):
    rng = np.random.default_rng(seed)
    lin = rng.choice(m * n, size=count, replace=False)
    return np.divmod(np.sort(lin), n)


def random_observed(m, n, count, seed):
    rows, cols = random_support(m, n, count, seed)
    vals = np.random.default_rng(seed + 1).standard_normal(count)
    return ObservedMatrix(m, n, rows, cols, vals)


def random_factors(m, n, r, seed, scale=1.0):
    """Orthonormal factors with decreasing positive singular values."""
    rng = np.random.default_rng(seed)
    qu, _ = np.linalg.qr(rng.standard_normal((m, r)))
    qv, _ = np.linalg.qr(rng.standard_normal((n, r)))
    d = np.sort(rng.uniform(0.5, 2.0, r))[::-1] * scale
    return LowRankFactors(qu, d, qv)


def random_operator(m, n, count, r, seed, scale=1.0):
    """Sparse-plus-low-rank operator with a random support and factors."""
    x = random_observed(m, n, count, seed)
    z = random_factors(m, n, r, seed + 7, scale=scale)
    return build_iteration_operator(x, z)


def factors_with_values(m, n, d, seed):
    """Orthonormal factors with a prescribed singular value sequence."""
    d = np.asarray(d, dtype=float)
    rng = np.random.default_rng(seed)
    qu, _ = np.linalg.qr(rng.standard_normal((m, d.size)))
    qv, _ = np.linalg.qr(rng.standard_normal((n, d.size)))
    return LowRankFactors(qu, d, qv)


def planted_instance(m, n, r, count, noise, seed):
    """Observed entries of a random rank-r matrix plus N(0, noise^2) noise.

    Returns (observed, truth_dense).
    """
    rng = np.random.default_rng(seed)
    truth = (rng.standard_normal((m, r)) / np.sqrt(r)) @ \
        rng.standard_normal((r, n))
    rows, cols = random_support(m, n, count, seed + 3)
    vals = truth[rows, cols]
    if noise:
        vals = vals + noise * rng.standard_normal(count)
    return ObservedMatrix(m, n, rows, cols, vals), truth
