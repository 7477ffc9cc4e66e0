"""
Matrix Market coordinate I/O for symmetric real matrices.

The banner and size line are checked here so that errors can name the line
and the offending token; the entries themselves are read by scipy.io.
"""

import logging
import os

import scipy.io
import scipy.sparse as sps

from linalg.sparse import SparseMatrix
from utils.exceptions import MatrixMarketError

logger = logging.getLogger("qnprec.market")

ACCEPTED_FIELDS = ("real", "integer")


def _check_banner(tokens: list[str]) -> None:
    expected = ["%%matrixmarket", "matrix", "coordinate"]
    if len(tokens) != 5:
        raise MatrixMarketError(f"banner must have 5 tokens, found {len(tokens)}", line=1,
                                token=tokens[0] if tokens else "")
    for token, wanted in zip(tokens, expected):
        if token.lower() != wanted:
            raise MatrixMarketError(f"expected '{wanted}' in banner", line=1, token=token)
    if tokens[3].lower() not in ACCEPTED_FIELDS:
        raise MatrixMarketError("only real or integer fields are supported", line=1, token=tokens[3])
    if tokens[4].lower() != "symmetric":
        raise MatrixMarketError("only symmetric matrices are accepted", line=1, token=tokens[4])


def read_header(path: str) -> tuple[int, int]:
    """
    Validate banner and size line.

    :param path: Matrix Market file.
    :return: Tuple of (n, number of stored entries).
    """
    if not os.path.isfile(path):
        raise MatrixMarketError(f"file '{path}' not found")
    with open(path, encoding="utf-8") as file:
        banner = file.readline()
        _check_banner(banner.split())
        line_number = 1
        for line in file:
            line_number += 1
            stripped = line.strip()
            if not stripped or stripped.startswith("%"):
                continue
            tokens = stripped.split()
            if len(tokens) != 3:
                raise MatrixMarketError("size line must hold 'rows cols entries'", line=line_number,
                                        token=stripped)
            sizes = []
            for token in tokens:
                try:
                    sizes.append(int(token))
                except ValueError:
                    raise MatrixMarketError("size line entries must be integers", line=line_number,
                                            token=token)
            rows, cols, entries = sizes
            if rows != cols:
                raise MatrixMarketError("symmetric matrix must be square", line=line_number, token=tokens[1])
            return rows, entries
    raise MatrixMarketError("missing size line", line=line_number)


def read_matrix_market(path: str) -> SparseMatrix:
    """
    Read a symmetric real coordinate Matrix Market file.

    One-based indices in the file become zero-based CSR indices; the stored
    lower triangle is expanded to the full symmetric pattern.

    :param path: File to read.
    :return: The matrix.
    """
    n, entries = read_header(path)
    try:
        matrix = scipy.io.mmread(path)
    except ValueError as e:
        raise MatrixMarketError(f"malformed entries section: {e}")
    csr = sps.csr_matrix(matrix)
    if csr.shape != (n, n):
        raise MatrixMarketError(f"size line announces {n}x{n} but {csr.shape} was read")
    logger.debug(f"Read {path}: n={n}, stored entries={entries}, nnz={csr.nnz}")
    return SparseMatrix.from_any(csr, symmetric=True)


def write_matrix_market(path: str, A: SparseMatrix, comment: str = "") -> None:
    """
    Write A as a symmetric coordinate file (lower triangle, 17 digits).

    :param path: Target file.
    :param A: Symmetric matrix.
    :param comment: Optional comment line.
    """
    scipy.io.mmwrite(path, sps.coo_matrix(A.csr), comment=comment, field="real", precision=17,
                     symmetry="symmetric")
