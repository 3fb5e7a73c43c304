"""Compressed sparse row matrices and a Jacobi-preconditioned conjugate gradient solver."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True, eq=False)
class SparseMatrix:
    """CSR matrix. Column indices are strictly increasing within each row."""

    n_rows: int
    n_cols: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    values: np.ndarray
    symmetric: bool = False
    _rows: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        offs = np.asarray(self.row_offsets, dtype=np.int64)
        cols = np.asarray(self.col_indices, dtype=np.int64)
        vals = np.asarray(self.values, dtype=float)
        if offs.shape != (self.n_rows + 1,):
            raise ValueError(f"row_offsets must have length n_rows+1={self.n_rows + 1}, got {offs.shape[0]}")
        if offs[0] != 0 or np.any(np.diff(offs) < 0) or offs[-1] != cols.shape[0]:
            raise ValueError("row_offsets must start at 0, be non-decreasing and end at nnz")
        if cols.shape != vals.shape:
            raise ValueError(f"col_indices ({cols.shape[0]}) and values ({vals.shape[0]}) differ in length")
        if cols.size and (cols.min() < 0 or cols.max() >= self.n_cols):
            raise ValueError(f"column index outside [0, {self.n_cols})")
        rows = np.repeat(np.arange(self.n_rows), np.diff(offs))
        same_row = rows[1:] == rows[:-1]
        if np.any(np.diff(cols)[same_row] <= 0):
            raise ValueError("column indices must be strictly increasing within each row")
        object.__setattr__(self, "row_offsets", offs)
        object.__setattr__(self, "col_indices", cols)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "_rows", rows)
        for arr in (offs, cols, vals, rows):
            arr.flags.writeable = False

    @classmethod
    def from_triplets(cls, rows, cols, vals, shape, symmetric=False) -> "SparseMatrix":
        """Build from coordinate triplets, summing duplicates."""
        n_rows, n_cols = shape
        rows = np.asarray(rows, dtype=np.int64).ravel()
        cols = np.asarray(cols, dtype=np.int64).ravel()
        vals = np.asarray(vals, dtype=float).ravel()
        if not (rows.shape == cols.shape == vals.shape):
            raise ValueError("triplet arrays must have equal length")
        if rows.size and (rows.min() < 0 or rows.max() >= n_rows or cols.min() < 0 or cols.max() >= n_cols):
            raise ValueError(f"triplet index outside shape {shape}")
        keys = rows * n_cols + cols
        uniq, inverse = np.unique(keys, return_inverse=True)
        summed = np.bincount(inverse, weights=vals, minlength=uniq.size)
        r = uniq // n_cols
        offsets = np.zeros(n_rows + 1, dtype=np.int64)
        np.cumsum(np.bincount(r, minlength=n_rows), out=offsets[1:])
        return cls(n_rows, n_cols, offsets, uniq % n_cols, summed, symmetric)

    @classmethod
    def from_dense(cls, a, symmetric=False) -> "SparseMatrix":
        a = np.asarray(a, dtype=float)
        r, c = np.nonzero(a)
        return cls.from_triplets(r, c, a[r, c], a.shape, symmetric)

    @classmethod
    def diag(cls, d) -> "SparseMatrix":
        d = np.asarray(d, dtype=float)
        idx = np.arange(d.size)
        return cls.from_triplets(idx, idx, d, (d.size, d.size), symmetric=True)

    @classmethod
    def identity(cls, n: int) -> "SparseMatrix":
        return cls.diag(np.ones(n))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_rows, self.n_cols)

    @property
    def nnz(self) -> int:
        return int(self.values.size)

    @property
    def row_indices(self) -> np.ndarray:
        """Row index of every stored entry (the expanded form of row_offsets)."""
        return self._rows

    def diagonal(self) -> np.ndarray:
        out = np.zeros(min(self.shape))
        on_diag = self._rows == self.col_indices
        out[self._rows[on_diag]] = self.values[on_diag]
        return out

    def transpose(self) -> "SparseMatrix":
        return SparseMatrix.from_triplets(self.col_indices, self._rows, self.values,
                                          (self.n_cols, self.n_rows), self.symmetric)

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.shape)
        out[self._rows, self.col_indices] = self.values
        return out

    def __matmul__(self, x):
        return spmv(self, x)


@dataclass(frozen=True)
class CgReport:
    iterations: int
    final_residual_norm: float
    converged: bool
    relative_residual: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "iterations", int(self.iterations))
        object.__setattr__(self, "final_residual_norm", float(self.final_residual_norm))
        object.__setattr__(self, "converged", bool(self.converged))
        object.__setattr__(self, "relative_residual", float(self.relative_residual))


def spmv(A: SparseMatrix, x) -> np.ndarray:
    """Return ``A @ x``."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.shape[0] != A.n_cols:
        raise ValueError(f"dimension mismatch: matrix is {A.n_rows}x{A.n_cols}, vector has length {x.shape}")
    prod = A.values * x[A.col_indices]
    return np.bincount(A.row_indices, weights=prod, minlength=A.n_rows)


def cg_solve(A: SparseMatrix, b, tol: float = 1e-10, max_iter: int | None = None,
             x0=None) -> tuple[np.ndarray, CgReport]:
    """Solve ``A x = b`` for symmetric positive definite ``A``.

    Jacobi preconditioning. Convergence is declared on the true residual
    ``||b - A x|| <= tol * ||b||``; the recursive residual only triggers the
    check. If ``max_iter`` is exhausted the best iterate is returned with
    ``converged=False``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if A.n_rows != A.n_cols:
        raise ValueError(f"matrix must be square, got {A.n_rows}x{A.n_cols}")
    b = np.asarray(b, dtype=float)
    if b.shape != (A.n_rows,):
        raise ValueError(f"dimension mismatch: matrix is {A.n_rows}x{A.n_cols}, rhs has shape {b.shape}")
    d = A.diagonal()
    zero = np.flatnonzero(d == 0)
    if zero.size:
        raise ValueError(f"zero diagonal entry at row {zero[0]} ({zero.size} rows total)")
    if max_iter is None:
        max_iter = 10 * A.n_rows
    inv_d = 1.0 / d

    bnorm = np.linalg.norm(b)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    if bnorm == 0.0:
        x[:] = 0.0
        return x, CgReport(0, 0.0, True, 0.0)
    target = tol * bnorm

    r = b - spmv(A, x)
    best_x, best_res = x.copy(), np.linalg.norm(r)
    if best_res <= target:
        return x, CgReport(0, best_res, True, best_res / bnorm)
    z = inv_d * r
    p = z.copy()
    rz = r @ z
    it = 0
    while it < max_iter:
        Ap = spmv(A, p)
        pAp = p @ Ap
        if pAp <= 0:
            break
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        it += 1
        if np.linalg.norm(r) <= target:
            # recursive residual can drift; confirm with the true one and restart if needed
            r = b - spmv(A, x)
            res = np.linalg.norm(r)
            if res < best_res:
                best_x, best_res = x.copy(), res
            if res <= target:
                return x, CgReport(it, res, True, res / bnorm)
            z = inv_d * r
            p = z.copy()
            rz = r @ z
            continue
        z = inv_d * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new

    res = np.linalg.norm(b - spmv(A, x))
    if res < best_res:
        best_x, best_res = x, res
    return best_x, CgReport(it, best_res, best_res <= target, best_res / bnorm)
