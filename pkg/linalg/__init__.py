"""
Sparse linear algebra core: matrix storage, kernels, generators and I/O.
"""

from linalg.kernels import axpy, dot, norm2, scale
from linalg.sparse import SparseMatrix, diagonal_matrix, identity, laplacian_2d, spmv

__all__ = [
    "SparseMatrix",
    "axpy",
    "diagonal_matrix",
    "dot",
    "identity",
    "laplacian_2d",
    "norm2",
    "scale",
    "spmv",
]
