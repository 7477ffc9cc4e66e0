"""
Sparse symmetric matrix storage for qnprec.

SparseMatrix wraps a canonical scipy CSR matrix (sorted, duplicate-free
column indices, full symmetric pattern) together with the symmetry flag.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sps

from utils.exceptions import DimensionMismatchError


@dataclass(frozen=True)
class SparseMatrix:
    """
    Square sparse matrix in compressed-sparse-row layout.

    Symmetric matrices are stored with their full pattern, never only one
    triangle, so that row-wise products and triangular extraction stay
    independent of each other.
    """

    csr: sps.csr_matrix
    symmetric_flag: bool = True

    @classmethod
    def from_any(cls, matrix, symmetric: Optional[bool] = None) -> "SparseMatrix":
        """
        Build a SparseMatrix from anything scipy.sparse understands.

        :param matrix: Dense array or sparse matrix.
        :param symmetric: Symmetry flag; detected exactly when omitted.
        :return: The canonicalised matrix, explicit zeros removed.
        """
        csr = sps.csr_matrix(matrix, dtype=np.float64)
        if csr.shape[0] != csr.shape[1]:
            raise DimensionMismatchError(csr.shape[0], csr.shape[1], what="matrix column count")
        csr.sum_duplicates()
        csr.eliminate_zeros()
        csr.sort_indices()
        if symmetric is None:
            symmetric = is_exactly_symmetric(csr)
        return cls(csr=csr, symmetric_flag=bool(symmetric))

    @property
    def n(self) -> int:
        return self.csr.shape[0]

    @property
    def row_ptr(self) -> np.ndarray:
        return self.csr.indptr

    @property
    def col_idx(self) -> np.ndarray:
        return self.csr.indices

    @property
    def values(self) -> np.ndarray:
        return self.csr.data

    @property
    def nnz(self) -> int:
        return self.csr.nnz

    def diagonal(self) -> np.ndarray:
        return self.csr.diagonal()

    def lower(self) -> sps.csr_matrix:
        """Lower triangle (diagonal included) in CSR layout."""
        return sps.tril(self.csr, format="csr")

    def to_dense(self) -> np.ndarray:
        return self.csr.toarray()

    def __matmul__(self, x: np.ndarray) -> np.ndarray:
        return spmv(self, x)

    def check_invariants(self) -> tuple[bool, Optional[str]]:
        """
        Check the storage invariants.

        :return: Tuple of (is_valid, error_message).
        """
        indptr, indices = self.csr.indptr, self.csr.indices
        if len(indptr) != self.n + 1 or np.any(np.diff(indptr) < 0):
            return False, "row_ptr must have length n+1 and be nondecreasing"
        if indices.size and (indices.min() < 0 or indices.max() >= self.n):
            return False, "column index out of range"
        for i in range(self.n):
            row = indices[indptr[i]:indptr[i + 1]]
            if np.any(np.diff(row) <= 0):
                return False, f"column indices of row {i} are not strictly increasing"
        if self.symmetric_flag and not is_exactly_symmetric(self.csr):
            return False, "matrix is flagged symmetric but A != A^T"
        return True, None


def is_exactly_symmetric(csr: sps.csr_matrix) -> bool:
    """Exact (pattern and value) symmetry test."""
    if (csr - csr.T).count_nonzero() != 0:
        return False
    pattern = csr.copy()
    pattern.data = np.ones_like(pattern.data)
    return (pattern - pattern.T).count_nonzero() == 0


def spmv(A: SparseMatrix, x: np.ndarray) -> np.ndarray:
    """
    Sparse matrix-vector product y = A x.

    :param A: The matrix.
    :param x: Vector of length A.n.
    :return: The product.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (A.n,):
        raise DimensionMismatchError(A.n, x.shape[0] if x.ndim else 0)
    return A.csr @ x


def identity(n: int) -> SparseMatrix:
    return SparseMatrix.from_any(sps.identity(n, format="csr"), symmetric=True)


def diagonal_matrix(d) -> SparseMatrix:
    d = np.atleast_1d(np.asarray(d, dtype=np.float64))
    return SparseMatrix.from_any(sps.diags(d, format="csr"), symmetric=True)


def laplacian_2d(m: int) -> SparseMatrix:
    """
    Five-point finite-difference Laplacian on an m x m grid.

    Diagonal 4, off-diagonals -1 and no mesh-size scaling; n = m**2 with
    lexicographic ordering of the grid points.

    :param m: Number of interior grid points per side.
    :return: The SPD matrix.
    """
    if m < 1:
        raise ValueError(f"laplacian_2d needs m >= 1, got {m}")
    tridiagonal = sps.diags([-np.ones(m - 1), 2.0 * np.ones(m), -np.ones(m - 1)], [-1, 0, 1], shape=(m, m), format="csr")
    eye = sps.identity(m, format="csr")
    matrix = sps.kron(eye, tridiagonal, format="csr") + sps.kron(tridiagonal, eye, format="csr")
    return SparseMatrix.from_any(matrix, symmetric=True)


def laplacian_2d_eigenvalue(m: int, i: int = 1, j: int = 1) -> float:
    """Analytic eigenvalue (i, j) of laplacian_2d(m), indices one-based."""
    h = np.pi / (2.0 * (m + 1))
    return float(4.0 * np.sin(i * h) ** 2 + 4.0 * np.sin(j * h) ** 2)


def laplacian_2d_eigenvector(m: int, i: int = 1, j: int = 1) -> np.ndarray:
    """Unit eigenvector matching laplacian_2d_eigenvalue(m, i, j)."""
    grid = np.arange(1, m + 1)
    vx = np.sin(i * np.pi * grid / (m + 1))
    vy = np.sin(j * np.pi * grid / (m + 1))
    vector = np.kron(vy, vx)
    return vector / np.linalg.norm(vector)


def random_spd(n: int, rng: np.random.Generator, condition: float = 100.0) -> np.ndarray:
    """
    Dense random SPD matrix with prescribed 2-norm condition number.

    :param n: Dimension.
    :param rng: Random generator.
    :param condition: Ratio of extreme eigenvalues.
    """
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    eigenvalues = np.geomspace(1.0, condition, n)
    matrix = (q * eigenvalues) @ q.T
    return 0.5 * (matrix + matrix.T)
