"""Sparse coordinate storage, masked projections, and the sparse-plus-low-rank operator.

The observed entries of a partially known matrix are kept in coordinate form
(never densified).  Iterates and solutions are kept in factored form
``U @ diag(d) @ V.T``.  The central object is :class:`SparsePlusLowRank`,
an implicit linear operator whose matvec costs ``O(nnz) + O((m + n) r)``,
which is what makes large-scale spectral thresholding feasible.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

# Entries processed per block when evaluating factored matrices on a sparse
# support, bounding scratch memory at _CHUNK * r floats.
_CHUNK = 1 << 18


@dataclass(frozen=True, eq=False)
class ObservedMatrix:
    """The observed entries of an m-by-n matrix, in sorted coordinate form.

    Rows/cols are 0-based.  Duplicate coordinates are rejected rather than
    summed: an aggregated duplicate would silently corrupt training-error
    semantics.  Explicit zeros are legitimate observations; membership in
    the observed set is positional, not value-based.
    """

    n_rows: int
    n_cols: int
    rows: np.ndarray
    cols: np.ndarray
    vals: np.ndarray

    def __post_init__(self):
        m, n = int(self.n_rows), int(self.n_cols)
        if m < 1 or n < 1:
            raise ValueError(f"matrix dimensions must be positive, got {m}x{n}")
        rows = np.asarray(self.rows, dtype=np.int64).ravel()
        cols = np.asarray(self.cols, dtype=np.int64).ravel()
        vals = np.asarray(self.vals, dtype=np.float64).ravel()
        if not (rows.size == cols.size == vals.size):
            raise ValueError("rows, cols, vals must have equal length")
        if rows.size < 1:
            raise ValueError("at least one observed entry is required")
        if rows.size and (rows.min() < 0 or rows.max() >= m):
            raise ValueError(f"row index out of range [0, {m})")
        if cols.size and (cols.min() < 0 or cols.max() >= n):
            raise ValueError(f"column index out of range [0, {n})")
        lin = rows * n + cols
        order = np.argsort(lin, kind="stable")
        lin = lin[order]
        if np.any(lin[1:] == lin[:-1]):
            k = int(np.flatnonzero(lin[1:] == lin[:-1])[0])
            i, j = divmod(int(lin[k]), n)
            raise ValueError(f"duplicate entry at ({i}, {j})")
        for name, arr in (("rows", rows[order]), ("cols", cols[order]),
                          ("vals", vals[order])):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "n_rows", m)
        object.__setattr__(self, "n_cols", n)

    @classmethod
    def from_entries(cls, n_rows, n_cols, entries):
        """Build from an iterable of (row, col, value) triples."""
        entries = list(entries)
        rows = np.array([e[0] for e in entries], dtype=np.int64)
        cols = np.array([e[1] for e in entries], dtype=np.int64)
        vals = np.array([e[2] for e in entries], dtype=np.float64)
        return cls(n_rows, n_cols, rows, cols, vals)

    @property
    def shape(self):
        return (self.n_rows, self.n_cols)

    @property
    def nnz(self):
        return self.rows.size

    def with_values(self, vals):
        """Same support, different values (no re-validation of indices)."""
        vals = np.asarray(vals, dtype=np.float64).ravel()
        if vals.size != self.nnz:
            raise ValueError("value count does not match support size")
        return ObservedMatrix(self.n_rows, self.n_cols, self.rows, self.cols, vals)


@dataclass(frozen=True, eq=False)
class LowRankFactors:
    """A matrix in factored SVD form ``U @ diag(d) @ V.T``.

    U (m, r) and V (n, r) have orthonormal columns; d is nonnegative and
    sorted nonincreasing.  r = 0 represents the zero matrix.
    """

    U: np.ndarray
    d: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        U = np.atleast_2d(np.asarray(self.U, dtype=np.float64))
        V = np.atleast_2d(np.asarray(self.V, dtype=np.float64))
        d = np.asarray(self.d, dtype=np.float64).ravel()
        if U.ndim != 2 or V.ndim != 2:
            raise ValueError("U and V must be 2-d arrays")
        if U.shape[1] != d.size or V.shape[1] != d.size:
            raise ValueError(
                f"factor rank mismatch: U has {U.shape[1]} columns, "
                f"V has {V.shape[1]}, d has {d.size} entries")
        if d.size and d.min() < 0:
            raise ValueError("singular values must be nonnegative")
        if d.size > 1 and np.any(d[1:] > d[:-1]):
            raise ValueError("singular values must be sorted nonincreasing")
        for name, arr in (("U", U), ("d", d), ("V", V)):
            arr = arr.copy() if not arr.flags.owndata else arr
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def zeros(cls, n_rows, n_cols):
        """Rank-0 factors for the zero matrix."""
        return cls(np.zeros((n_rows, 0)), np.zeros(0), np.zeros((n_cols, 0)))

    @property
    def shape(self):
        return (self.U.shape[0], self.V.shape[0])

    @property
    def rank(self):
        return self.d.size

    def to_dense(self):
        """Materialize the m-by-n matrix. Intended for small problems only."""
        if self.rank == 0:
            return np.zeros(self.shape)
        return (self.U * self.d) @ self.V.T

    def orthonormality_defect(self):
        """max-norm deviation of U'U and V'V from the identity."""
        if self.rank == 0:
            return 0.0
        eye = np.eye(self.rank)
        du = np.abs(self.U.T @ self.U - eye).max()
        dv = np.abs(self.V.T @ self.V - eye).max()
        return float(max(du, dv))


def lowrank_norm_sq(z: LowRankFactors) -> float:
    """Squared Frobenius norm, read off the singular values."""
    return float(np.dot(z.d, z.d))


def lowrank_inner(a: LowRankFactors, b: LowRankFactors) -> float:
    """Frobenius inner product <A, B> of two factored matrices.

    Computed as tr(diag(da) Ua'Ub diag(db) Vb'Va) on r x r Grams; nothing
    of size m x n is formed.
    """
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.rank == 0 or b.rank == 0:
        return 0.0
    uu = (a.U * a.d).T @ b.U          # (ra, rb)
    vv = b.V.T @ (a.V)                # (rb, ra)
    return float(np.sum(uu.T * (vv * b.d[:, None])))


def lowrank_diff_norm_sq(a: LowRankFactors, b: LowRankFactors) -> float:
    """||A - B||_F^2 via the Gram identity, clamped at zero against roundoff."""
    val = lowrank_norm_sq(a) + lowrank_norm_sq(b) - 2.0 * lowrank_inner(a, b)
    return max(val, 0.0)


def project_omega(z: LowRankFactors, omega: ObservedMatrix) -> np.ndarray:
    """Evaluate a factored matrix on the observed support.

    Returns, for each observed (i, j) in omega's sorted entry order, the
    value sum_l U[i, l] d[l] V[j, l].  Cost O(nnz * r), evaluated in blocks.

    Parameters
    ----------
    z : LowRankFactors
        Factored matrix with dimensions matching ``omega``.
    omega : ObservedMatrix
        Supplies the support; its values are ignored.
    """
    if z.shape != omega.shape:
        raise ValueError(f"dimension mismatch: factors {z.shape}, "
                         f"observed {omega.shape}")
    out = np.zeros(omega.nnz)
    if z.rank == 0:
        return out
    Ud = z.U * z.d
    for start in range(0, omega.nnz, _CHUNK):
        stop = min(start + _CHUNK, omega.nnz)
        ridx = omega.rows[start:stop]
        cidx = omega.cols[start:stop]
        out[start:stop] = np.einsum("ij,ij->i", Ud[ridx], z.V[cidx])
    return out


@dataclass(frozen=True, eq=False)
class SparsePlusLowRank:
    """Implicit linear operator: a sparse coordinate part plus factored part.

    Represents ``S + U diag(d) V.T`` where S lives on the observed support.
    Supports matvec/rmatvec at cost O(nnz) + O((m + n) r); the dense matrix
    is never formed.  Immutable and safe for concurrent use.
    """

    sparse_support: ObservedMatrix
    lowrank: LowRankFactors

    def __post_init__(self):
        if self.sparse_support.shape != self.lowrank.shape:
            raise ValueError(
                f"dimension mismatch: sparse part {self.sparse_support.shape}, "
                f"low-rank part {self.lowrank.shape}")

    @property
    def shape(self):
        return self.sparse_support.shape

    @cached_property
    def _csr(self):
        s = self.sparse_support
        return sp.csr_matrix((s.vals, (s.rows, s.cols)), shape=s.shape)

    @cached_property
    def _csc(self):
        return self._csr.tocsc()

    def matvec(self, b: np.ndarray) -> np.ndarray:
        """y = W @ b for a length-n vector b."""
        b = np.asarray(b, dtype=np.float64).ravel()
        m, n = self.shape
        if b.size != n:
            raise ValueError(f"matvec length mismatch: expected {n}, got {b.size}")
        y = self._csr @ b
        lr = self.lowrank
        if lr.rank:
            y = y + lr.U @ (lr.d * (lr.V.T @ b))
        return y

    def rmatvec(self, b: np.ndarray) -> np.ndarray:
        """y = W.T @ b for a length-m vector b."""
        b = np.asarray(b, dtype=np.float64).ravel()
        m, n = self.shape
        if b.size != m:
            raise ValueError(f"rmatvec length mismatch: expected {m}, got {b.size}")
        y = self._csc.T @ b
        lr = self.lowrank
        if lr.rank:
            y = y + lr.V @ (lr.d * (lr.U.T @ b))
        return y

    def matmat(self, B: np.ndarray) -> np.ndarray:
        """W @ B for an (n, k) block, one column at a time cost-wise."""
        B = np.asarray(B, dtype=np.float64)
        m, n = self.shape
        if B.ndim != 2 or B.shape[0] != n:
            raise ValueError(f"matmat shape mismatch: expected ({n}, k)")
        Y = self._csr @ B
        lr = self.lowrank
        if lr.rank:
            Y = Y + lr.U @ (lr.d[:, None] * (lr.V.T @ B))
        return Y

    def rmatmat(self, B: np.ndarray) -> np.ndarray:
        """W.T @ B for an (m, k) block."""
        B = np.asarray(B, dtype=np.float64)
        m, n = self.shape
        if B.ndim != 2 or B.shape[0] != m:
            raise ValueError(f"rmatmat shape mismatch: expected ({m}, k)")
        Y = self._csc.T @ B
        lr = self.lowrank
        if lr.rank:
            Y = Y + lr.V @ (lr.d[:, None] * (lr.U.T @ B))
        return Y


def build_iteration_operator(x: ObservedMatrix,
                             z_old: LowRankFactors) -> SparsePlusLowRank:
    """Assemble the per-iteration target as sparse + low rank.

    The matrix whose thresholded SVD drives each impute step is the observed
    data with missing cells filled from the current iterate.  It splits as

        (observed residual on the support)  +  (current iterate, factored)

    so the sparse part carries ``x - z_old`` on the support and the low-rank
    part is ``z_old`` itself.
    """
    if x.shape != z_old.shape:
        raise ValueError(f"dimension mismatch: observed {x.shape}, "
                         f"iterate {z_old.shape}")
    resid = x.vals - project_omega(z_old, x)
    return SparsePlusLowRank(x.with_values(resid), z_old)


def sparse_only_operator(x: ObservedMatrix) -> SparsePlusLowRank:
    """Wrap the observed entries alone as an operator (zero low-rank part)."""
    return SparsePlusLowRank(x, LowRankFactors.zeros(*x.shape))


def lowrank_only_operator(z: LowRankFactors) -> SparsePlusLowRank:
    """Wrap factors alone as an operator (sparse part a single explicit zero)."""
    m, n = z.shape
    support = ObservedMatrix(m, n, np.zeros(1, dtype=np.int64),
                             np.zeros(1, dtype=np.int64), np.zeros(1))
    return SparsePlusLowRank(support, z)


def read_matrix_market(path) -> ObservedMatrix:
    """Read a MatrixMarket coordinate file into an ObservedMatrix.

    Accepts the ``matrix coordinate real general`` banner (case-insensitive),
    ``%`` comment lines, a size line ``m n nnz``, and nnz 1-based
    ``i j value`` lines.  Malformed content raises ValueError with the
    offending line number.
    """
    def fail(lineno, msg):
        raise ValueError(f"{path}:{lineno}: {msg}")

    with open(path, "r", encoding="utf-8") as fh:
        banner = fh.readline()
        if not banner:
            fail(1, "empty file")
        fields = banner.strip().lower().split()
        if fields[:1] != ["%%matrixmarket"] or fields[1:5] != [
                "matrix", "coordinate", "real", "general"]:
            fail(1, "expected header '%%MatrixMarket matrix coordinate real general'")
        lineno = 1
        size_line = None
        for line in fh:
            lineno += 1
            if line.startswith("%") or not line.strip():
                continue
            size_line = line
            break
        if size_line is None:
            fail(lineno, "missing size line 'm n nnz'")
        parts = size_line.split()
        if len(parts) != 3:
            fail(lineno, f"size line must have 3 fields, got {len(parts)}")
        try:
            m, n, nnz = (int(p) for p in parts)
        except ValueError:
            fail(lineno, f"size line fields must be integers: {size_line.strip()!r}")
        rows = np.empty(nnz, dtype=np.int64)
        cols = np.empty(nnz, dtype=np.int64)
        vals = np.empty(nnz, dtype=np.float64)
        k = 0
        for line in fh:
            lineno += 1
            if line.startswith("%") or not line.strip():
                continue
            if k >= nnz:
                fail(lineno, f"more than the declared {nnz} entries")
            parts = line.split()
            if len(parts) != 3:
                fail(lineno, f"entry line must have 3 fields, got {len(parts)}")
            try:
                i, j, v = int(parts[0]), int(parts[1]), float(parts[2])
            except ValueError:
                fail(lineno, f"malformed entry: {line.strip()!r}")
            if not (1 <= i <= m) or not (1 <= j <= n):
                fail(lineno, f"index ({i}, {j}) outside 1-based range "
                             f"[1, {m}] x [1, {n}]")
            rows[k], cols[k], vals[k] = i - 1, j - 1, v
            k += 1
        if k != nnz:
            fail(lineno, f"declared {nnz} entries but found {k}")
    try:
        return ObservedMatrix(m, n, rows, cols, vals)
    except ValueError as exc:
        raise ValueError(f"{path}: {exc}") from exc


def write_matrix_market(path, x: ObservedMatrix, comment: str | None = None):
    """Write an ObservedMatrix in MatrixMarket coordinate format (1-based)."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("%%MatrixMarket matrix coordinate real general\n")
        if comment:
            for line in comment.splitlines():
                fh.write(f"% {line}\n")
        fh.write(f"{x.n_rows} {x.n_cols} {x.nnz}\n")
        for i, j, v in zip(x.rows, x.cols, x.vals):
            fh.write(f"{i + 1} {j + 1} {v:.17g}\n")
