"""Sparse matrix storage, MatrixMarket ingestion and block orthogonalization."""

from __future__ import annotations

import os

import numpy as np
import scipy.io
import scipy.sparse as sp

__all__ = [
    "SparseMatrix",
    "MatrixMarketError",
    "DimensionError",
    "load_matrix_market",
    "one_norm",
    "orthonormalize_against",
    "REJECT_TOL",
]

# v is treated as lying in span(B) below this relative residual
REJECT_TOL = 1e-12


class MatrixMarketError(ValueError):
    """Raised for malformed or unsupported MatrixMarket input."""


class DimensionError(ValueError):
    """Raised when a vector length does not match the matrix shape."""


class SparseMatrix:
    """Immutable real M x N matrix in compressed-sparse-row form.

    A compressed-sparse-column copy is kept alongside so that both ``A @ x``
    and ``A.T @ y`` run over contiguous index arrays. Duplicate coordinates
    are summed at construction.
    """

    __slots__ = ("_csr", "_csc_t", "_norm1", "_aug")

    def __init__(self, matrix):
        csr = sp.csr_matrix(matrix, dtype=np.float64)
        if csr.shape[0] < 1 or csr.shape[1] < 1:
            raise ValueError(f"matrix must be at least 1x1, got {csr.shape}")
        csr.sum_duplicates()
        csr.eliminate_zeros()
        csr.sort_indices()
        csr.data.flags.writeable = False
        self._csr = csr
        # transpose stored as CSR of A^T, i.e. the CSC view of A
        self._csc_t = csr.T.tocsr()
        self._csc_t.sort_indices()
        self._norm1 = None
        self._aug = None

    @classmethod
    def from_coo(cls, rows, cols, vals, shape):
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        m, n = shape
        if rows.size and (rows.min() < 0 or rows.max() >= m or cols.min() < 0 or cols.max() >= n):
            raise IndexError("coordinate index out of bounds")
        return cls(sp.coo_matrix((np.asarray(vals, dtype=np.float64), (rows, cols)), shape=shape))

    @classmethod
    def from_dense(cls, dense):
        return cls(sp.csr_matrix(np.asarray(dense, dtype=np.float64)))

    @property
    def shape(self) -> tuple[int, int]:
        return self._csr.shape

    @property
    def nrows(self) -> int:
        return self._csr.shape[0]

    @property
    def ncols(self) -> int:
        return self._csr.shape[1]

    @property
    def nnz(self) -> int:
        return self._csr.nnz

    @property
    def csr(self) -> sp.csr_matrix:
        return self._csr

    def entries(self):
        """Return ``(rows, cols, values)`` of the stored nonzeros."""
        coo = self._csr.tocoo()
        return coo.row.copy(), coo.col.copy(), coo.data.copy()

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Return ``A @ x`` (``x`` may be a vector or an N x k block)."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape[0] != self.ncols:
            raise DimensionError(f"expected leading dimension {self.ncols}, got {x.shape[0]}")
        return self._csr @ x

    def apply_transpose(self, y: np.ndarray) -> np.ndarray:
        """Return ``A.T @ y`` (``y`` may be a vector or an M x k block)."""
        y = np.asarray(y, dtype=np.float64)
        if y.shape[0] != self.nrows:
            raise DimensionError(f"expected leading dimension {self.nrows}, got {y.shape[0]}")
        return self._csc_t @ y

    def shifted_augmented(self, tau: float) -> sp.csr_matrix:
        """``[[-tau I, A], [A.T, -tau I]]`` as one CSR matrix, cached for the last ``tau``."""
        cached = self._aug
        if cached is not None and cached[0] == tau:
            return cached[1]
        M, N = self.shape
        K = sp.bmat(
            [[-tau * sp.identity(M, format="csr"), self._csr], [self._csc_t, -tau * sp.identity(N, format="csr")]],
            format="csr",
        )
        K.sort_indices()
        self._aug = (tau, K)
        return K

    def transpose(self) -> "SparseMatrix":
        return SparseMatrix(self._csc_t)

    def todense(self) -> np.ndarray:
        return self._csr.toarray()

    def __repr__(self):
        return f"SparseMatrix(shape={self.shape}, nnz={self.nnz})"


def one_norm(A: SparseMatrix) -> float:
    """Maximum absolute column sum of ``A``."""
    if A._norm1 is None:
        colsums = np.zeros(A.ncols)
        np.add.at(colsums, A.csr.indices, np.abs(A.csr.data))
        A._norm1 = float(colsums.max()) if colsums.size else 0.0
    return A._norm1


def _read_header(path):
    with open(path, "r") as fh:
        first = fh.readline()
    tokens = first.strip().split()
    if len(tokens) != 5 or tokens[0].lower() != "%%matrixmarket":
        raise MatrixMarketError(f"{path}: missing or malformed MatrixMarket banner")
    obj, fmt, field, symm = (t.lower() for t in tokens[1:])
    if obj != "matrix":
        raise MatrixMarketError(f"{path}: unsupported object '{obj}'")
    if fmt not in ("coordinate", "array"):
        raise MatrixMarketError(f"{path}: unsupported format '{fmt}'")
    if field == "complex":
        raise MatrixMarketError(f"{path}: complex matrices are not supported")
    if field not in ("real", "integer", "pattern", "double"):
        raise MatrixMarketError(f"{path}: unsupported field '{field}'")
    if symm not in ("general", "symmetric", "skew-symmetric"):
        raise MatrixMarketError(f"{path}: unsupported symmetry '{symm}'")
    if fmt == "array" and field == "pattern":
        raise MatrixMarketError(f"{path}: pattern field is only valid for coordinate format")
    return fmt, field, symm


def _data_lines(fh):
    for line in fh:
        s = line.strip()
        if s and not s.startswith("%"):
            yield s


def _parse_coordinate(path, field, symm):
    with open(path, "r") as fh:
        lines = _data_lines(fh)
        try:
            size = next(lines).split()
            m, n, nnz = (int(t) for t in size)
        except (StopIteration, ValueError):
            raise MatrixMarketError(f"{path}: malformed size line") from None
        if m < 1 or n < 1 or nnz < 0:
            raise MatrixMarketError(f"{path}: invalid dimensions {m} x {n}, nnz={nnz}")
        ncol = 2 if field == "pattern" else 3
        body = [ln.split() for ln in lines]
    if len(body) != nnz:
        raise MatrixMarketError(f"{path}: header declares {nnz} entries, found {len(body)}")
    if any(len(tok) != ncol for tok in body):
        raise MatrixMarketError(f"{path}: entry lines must have {ncol} fields")
    try:
        arr = np.array(body, dtype=np.float64).reshape(nnz, ncol)
    except ValueError:
        raise MatrixMarketError(f"{path}: non-numeric entry") from None
    rows = arr[:, 0]
    cols = arr[:, 1]
    if np.any(rows != np.round(rows)) or np.any(cols != np.round(cols)):
        raise MatrixMarketError(f"{path}: non-integer index")
    rows = rows.astype(np.int64) - 1
    cols = cols.astype(np.int64) - 1
    if nnz and (rows.min() < 0 or rows.max() >= m or cols.min() < 0 or cols.max() >= n):
        raise MatrixMarketError(f"{path}: index out of declared bounds {m} x {n}")
    vals = np.ones(nnz) if field == "pattern" else arr[:, 2].copy()
    if symm != "general":
        off = rows != cols
        sign = -1.0 if symm == "skew-symmetric" else 1.0
        rows, cols, vals = (
            np.concatenate([rows, cols[off]]),
            np.concatenate([cols, rows[off]]),
            np.concatenate([vals, sign * vals[off]]),
        )
    return SparseMatrix.from_coo(rows, cols, vals, (m, n))


def load_matrix_market(path) -> SparseMatrix:
    """Read a real MatrixMarket file into a :class:`SparseMatrix`.

    Coordinate files are parsed here so duplicates can be summed and bounds
    checked with useful messages; dense ``array`` files go through
    :func:`scipy.io.mmread`. Pattern files get unit values, and symmetric or
    skew-symmetric storage is expanded to the full matrix.
    """
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise FileNotFoundError(path)
    fmt, field, symm = _read_header(path)
    if fmt == "coordinate":
        return _parse_coordinate(path, field, symm)
    try:
        dense = scipy.io.mmread(path)
    except (ValueError, IndexError) as exc:
        raise MatrixMarketError(f"{path}: {exc}") from None
    return SparseMatrix.from_dense(np.asarray(dense, dtype=np.float64))


def orthonormalize_against(v: np.ndarray, B: np.ndarray | None):
    """Project ``v`` onto the orthogonal complement of ``range(B)`` and normalize.

    Classical Gram-Schmidt is applied twice unconditionally. Returns
    ``(w, resnorm)`` where ``resnorm`` is the norm of the projected vector
    before normalization; ``w`` is ``None`` when ``v`` lies numerically inside
    ``range(B)`` (``resnorm <= 1e-12 * ||v||``).
    """
    v = np.array(v, dtype=np.float64, copy=True)
    vnorm = np.linalg.norm(v)
    if vnorm == 0.0 or not np.isfinite(vnorm):
        return None, 0.0
    if B is not None and B.shape[1] > 0:
        for _ in range(2):
            v -= B @ (B.T @ v)
    resnorm = float(np.linalg.norm(v))
    if resnorm <= REJECT_TOL * vnorm:
        return None, resnorm
    w = v / resnorm
    if B is None or B.shape[1] == 0:
        return w, resnorm
    # heavy cancellation can leave O(u * ||v|| / resnorm) components behind
    for _ in range(3):
        c = B.T @ w
        if np.max(np.abs(c)) <= REJECT_TOL:
            return w, resnorm
        w -= B @ c
        w /= np.linalg.norm(w)
    return None, resnorm
