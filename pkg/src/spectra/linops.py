"""Immutable matrix storage, products, row sampling metadata and norm estimates."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np
import scipy.sparse as sp

from . import kernels


class MatrixFormatError(ValueError):
    """Raised for malformed Matrix Market input."""


class DimensionError(ValueError):
    """Raised when operand shapes do not agree."""


class DegenerateMatrixError(ValueError):
    """Raised when an operation needs a nonzero matrix."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SparseMatrix:
    """Compressed-row matrix with cached row norms."""

    n_rows: int
    n_cols: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    values: np.ndarray
    row_sq_norms: np.ndarray = field(repr=False)
    frob_sq: float
    max_row_nnz: int

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_rows, self.n_cols)

    @property
    def nnz(self) -> int:
        return int(self.row_offsets[-1])

    @classmethod
    def from_csr(cls, indptr, indices, data, shape) -> "SparseMatrix":
        n, d = int(shape[0]), int(shape[1])
        indptr = np.asarray(indptr, dtype=np.int64)
        indices = np.asarray(indices, dtype=np.int64)
        data = np.asarray(data, dtype=np.float64)
        if indptr.shape[0] != n + 1 or indptr[0] != 0 or np.any(np.diff(indptr) < 0):
            raise DimensionError("row offsets must be nondecreasing and start at 0")
        if indptr[-1] != indices.shape[0] or indices.shape[0] != data.shape[0]:
            raise DimensionError("last row offset must equal nnz")
        if indices.size and (indices.min() < 0 or indices.max() >= d):
            raise DimensionError("column index out of range")
        counts = np.diff(indptr)
        rows = np.repeat(np.arange(n), counts)
        row_sq = np.bincount(rows, weights=data * data, minlength=n).astype(np.float64)
        return cls(
            n_rows=n,
            n_cols=d,
            row_offsets=_frozen(indptr),
            col_indices=_frozen(indices),
            values=_frozen(data),
            row_sq_norms=_frozen(row_sq),
            frob_sq=float(math.fsum(row_sq)),
            max_row_nnz=int(counts.max()) if n else 0,
        )

    @classmethod
    def from_scipy(cls, m) -> "SparseMatrix":
        m = sp.csr_matrix(m, dtype=np.float64)
        m.sum_duplicates()
        m.sort_indices()
        return cls.from_csr(m.indptr, m.indices, m.data, m.shape)

    @classmethod
    def from_dense(cls, a) -> "SparseMatrix":
        return cls.from_scipy(sp.csr_matrix(np.asarray(a, dtype=np.float64)))

    def to_scipy(self) -> sp.csr_matrix:
        return sp.csr_matrix((self.values, self.col_indices, self.row_offsets), shape=self.shape)

    def to_dense(self) -> np.ndarray:
        return self.to_scipy().toarray()

    def transpose(self) -> "SparseMatrix":
        return SparseMatrix.from_scipy(self.to_scipy().T.tocsr())

    def row(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.row_offsets[i], self.row_offsets[i + 1]
        return self.col_indices[lo:hi], self.values[lo:hi]


@dataclass(frozen=True, eq=False)
class DenseMatrix:
    """Row-major dense matrix."""

    n_rows: int
    n_cols: int
    values: np.ndarray

    def __post_init__(self):
        if self.values.size != self.n_rows * self.n_cols:
            raise DimensionError("values length must equal n_rows * n_cols")

    @classmethod
    def from_array(cls, a) -> "DenseMatrix":
        a = np.array(a, dtype=np.float64, order="C", ndmin=2)
        return cls(a.shape[0], a.shape[1], _frozen(a.reshape(-1)))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_rows, self.n_cols)

    @property
    def array(self) -> np.ndarray:
        return self.values.reshape(self.n_rows, self.n_cols)

    @property
    def row_sq_norms(self) -> np.ndarray:
        return np.einsum("ij,ij->i", self.array, self.array)

    @property
    def frob_sq(self) -> float:
        return float(math.fsum(self.row_sq_norms))

    @property
    def nnz(self) -> int:
        return int(np.count_nonzero(self.values))

    @property
    def max_row_nnz(self) -> int:
        return int(np.count_nonzero(self.array, axis=1).max()) if self.n_rows else 0

    def to_dense(self) -> np.ndarray:
        return self.array.copy()

    def transpose(self) -> "DenseMatrix":
        return DenseMatrix.from_array(self.array.T)


Matrix = Union[SparseMatrix, DenseMatrix]


def as_matrix(a) -> Matrix:
    """Wrap arrays or scipy matrices; pass library matrices through."""
    if isinstance(a, (SparseMatrix, DenseMatrix)):
        return a
    if sp.issparse(a):
        return SparseMatrix.from_scipy(a)
    return SparseMatrix.from_dense(a)


def to_dense(a) -> np.ndarray:
    return as_matrix(a).to_dense()


def oriented(a: Matrix) -> Matrix:
    """Return ``a`` or its transpose so that rows >= columns (same singular values)."""
    return a.transpose() if a.n_rows < a.n_cols else a


# --------------------------------------------------------------------------
# Matrix Market input


def load_matrix_market(path) -> SparseMatrix:
    """Parse a real Matrix Market coordinate file (general or symmetric)."""
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        lines = fh.readlines()
    if not lines:
        raise MatrixFormatError(f"{path}: line 1: empty file")
    header = lines[0].strip().split()
    if len(header) != 5 or header[0].lower() != "%%matrixmarket":
        raise MatrixFormatError(f"{path}: line 1: missing %%MatrixMarket banner")
    obj, fmt, fld, sym = (h.lower() for h in header[1:])
    if obj != "matrix" or fmt != "coordinate":
        raise MatrixFormatError(f"{path}: line 1: only 'matrix coordinate' is supported")
    if fld not in ("real", "integer", "double"):
        raise MatrixFormatError(f"{path}: line 1: non-real field '{fld}'")
    if sym not in ("general", "symmetric"):
        raise MatrixFormatError(f"{path}: line 1: unsupported symmetry '{sym}'")

    ln = 1
    while ln < len(lines) and (not lines[ln].strip() or lines[ln].lstrip().startswith("%")):
        ln += 1
    if ln >= len(lines):
        raise MatrixFormatError(f"{path}: line {ln + 1}: missing size line")
    try:
        n, d, nz = (int(t) for t in lines[ln].split())
    except ValueError:
        raise MatrixFormatError(f"{path}: line {ln + 1}: bad size line") from None
    if n < 0 or d < 0 or nz < 0:
        raise MatrixFormatError(f"{path}: line {ln + 1}: negative dimension")
    if sym == "symmetric" and n != d:
        raise MatrixFormatError(f"{path}: line {ln + 1}: symmetric matrix must be square")

    rows, cols, vals = [], [], []
    for j in range(ln + 1, len(lines)):
        text = lines[j].strip()
        if not text or text.startswith("%"):
            continue
        parts = text.split()
        if len(parts) != 3:
            raise MatrixFormatError(f"{path}: line {j + 1}: expected 'row col value'")
        try:
            r, c, v = int(parts[0]) - 1, int(parts[1]) - 1, float(parts[2])
        except ValueError:
            raise MatrixFormatError(f"{path}: line {j + 1}: cannot parse entry") from None
        if not (0 <= r < n and 0 <= c < d):
            raise MatrixFormatError(f"{path}: line {j + 1}: index outside {n}x{d}")
        rows.append(r)
        cols.append(c)
        vals.append(v)
        if sym == "symmetric" and r != c:
            rows.append(c)
            cols.append(r)
            vals.append(v)
    stored = len(vals) if sym == "general" else sum(1 for r, c in zip(rows, cols) if r >= c)
    if stored != nz:
        raise MatrixFormatError(f"{path}: declared {nz} entries, found {stored}")
    m = sp.coo_matrix((vals, (rows, cols)), shape=(n, d)).tocsr()
    return SparseMatrix.from_scipy(m)


def save_matrix_market(path, a) -> None:
    """Write a matrix in general coordinate format."""
    m = as_matrix(a)
    s = sp.coo_matrix(m.to_scipy() if isinstance(m, SparseMatrix) else m.array)
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write("%%MatrixMarket matrix coordinate real general\n")
        fh.write(f"{s.shape[0]} {s.shape[1]} {s.nnz}\n")
        for r, c, v in zip(s.row, s.col, s.data):
            fh.write(f"{r + 1} {c + 1} {float(v)!r}\n")


# --------------------------------------------------------------------------
# Products


def _check_len(v: np.ndarray, n: int, what: str) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.shape[0] != n:
        raise DimensionError(f"{what}: expected leading dimension {n}, got {v.shape[0]}")
    return v


def apply(a: Matrix, v) -> np.ndarray:
    """A v for a vector or a block of column vectors."""
    v = _check_len(v, a.n_cols, "apply")
    if isinstance(a, DenseMatrix):
        return a.array @ v
    if v.ndim == 1:
        return kernels.csr_matvec(a.row_offsets, a.col_indices, a.values, v)
    return kernels.csr_matmat(a.row_offsets, a.col_indices, a.values, v)


def apply_transpose(a: Matrix, v) -> np.ndarray:
    """A^T v for a vector or a block of column vectors."""
    v = _check_len(v, a.n_rows, "apply_transpose")
    if isinstance(a, DenseMatrix):
        return a.array.T @ v
    if v.ndim == 1:
        return kernels.csr_rmatvec(a.row_offsets, a.col_indices, a.values, v, a.n_cols)
    return kernels.csr_rmatmat(a.row_offsets, a.col_indices, a.values, v, a.n_cols)


def gram_apply(a: Matrix, v) -> np.ndarray:
    """A^T A v, composed as two products."""
    return apply_transpose(a, apply(a, v))


def gram_dense(a: Matrix) -> np.ndarray:
    """Explicit d x d Gram matrix A^T A."""
    if isinstance(a, DenseMatrix):
        x = a.array
        return x.T @ x
    s = a.to_scipy()
    if a.n_rows * a.n_cols <= 4_000_000:
        x = s.toarray()
        g = x.T @ x
    else:
        g = (s.T @ s).toarray()
    return 0.5 * (g + g.T)


# --------------------------------------------------------------------------
# Row sampling


@dataclass(frozen=True, eq=False)
class RowDistribution:
    probabilities: np.ndarray
    cumulative: np.ndarray

    def sample(self, u) -> np.ndarray:
        """Inverse-CDF sampling for uniforms ``u`` in [0, 1)."""
        idx = np.searchsorted(self.cumulative, np.asarray(u) * self.cumulative[-1], side="right")
        return np.minimum(idx, self.probabilities.shape[0] - 1)


def distribution_from_weights(w) -> RowDistribution:
    w = np.asarray(w, dtype=np.float64)
    total = math.fsum(w)
    if not total > 0:
        raise DegenerateMatrixError("all-zero weights give no sampling distribution")
    p = w / total
    cum = np.cumsum(p)
    # rows with zero weight must never be returned by inverse-CDF sampling
    cum[-1] = 1.0
    return RowDistribution(_frozen(p), _frozen(cum))


def row_distribution(a: Matrix) -> RowDistribution:
    """p_i = |a_i|^2 / |A|_F^2."""
    return distribution_from_weights(a.row_sq_norms)


# --------------------------------------------------------------------------
# Spectral norm


def spectral_norm_estimate(a: Matrix, seed: int = 0, return_rayleigh: bool = False):
    """Factor-two overestimate M with |A|_2 <= M <= 2|A|_2 (w.h.p.)."""
    n = max(a.n_rows, a.n_cols)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), 0x5EC])))
    x = rng.standard_normal(a.n_cols)
    iters = int(math.ceil(10 * math.log(max(n, 2))))
    rq = 0.0
    for _ in range(iters):
        nrm = np.linalg.norm(x)
        if nrm == 0.0:
            break
        x = x / nrm
        y = gram_apply(a, x)
        rq = float(x @ y)
        x = y
    if not rq > 0.0:
        raise DegenerateMatrixError("spectral norm estimate needs a nonzero matrix")
    m = 2.0 * math.sqrt(rq)
    return (m, math.sqrt(rq)) if return_rayleigh else m
