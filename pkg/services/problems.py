"""
Built-in nonlinear test problems F(u) = A u - lambda d(u) - b.

Bratu uses d(u) = exp(u), PHI-2 uses d(u) = u^3 with lambda = -1; the
linear nonlinearity (d = 0) gives plain linear systems A u = b.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np
import scipy.sparse as sps

from linalg.market import read_matrix_market
from linalg.sparse import SparseMatrix, laplacian_2d, spmv
from utils.exceptions import DimensionMismatchError, DivergenceError

logger = logging.getLogger("qnprec.problems")

DEFAULT_INITIAL_VALUE = 0.1


class Nonlinearity(str, Enum):
    EXPONENTIAL = "exponential"
    CUBIC = "cubic"
    LINEAR = "linear"

    @classmethod
    def parse(cls, name: str) -> "Nonlinearity":
        aliases = {"bratu": cls.EXPONENTIAL, "exp": cls.EXPONENTIAL, "phi2": cls.CUBIC}
        key = name.strip().lower()
        if key in aliases:
            return aliases[key]
        return cls(key)


@dataclass(frozen=True)
class NonlinearProblem:
    """
    Diagonal nonlinear perturbation of a symmetric matrix.

    :param A: Symmetric matrix.
    :param nonlinearity: The componentwise term d(u).
    :param lam: Scalar lambda in front of d(u).
    :param b: Optional constant right-hand side.
    :param name: Label used in logs and traces.
    """

    A: SparseMatrix
    nonlinearity: Nonlinearity
    lam: float = -1.0
    b: Optional[np.ndarray] = None
    name: str = "problem"

    @property
    def n(self) -> int:
        return self.A.n

    def residual(self, u: np.ndarray) -> np.ndarray:
        return residual(self, u)

    def jacobian(self, u: np.ndarray) -> SparseMatrix:
        return jacobian(self, u)


def _check_length(p: NonlinearProblem, u: np.ndarray) -> np.ndarray:
    u = np.asarray(u, dtype=np.float64)
    if u.shape != (p.n,):
        raise DimensionMismatchError(p.n, u.shape[0] if u.ndim else 0, what="iterate")
    return u


def _term(p: NonlinearProblem, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return d(u) and its derivative d'(u)."""
    if p.nonlinearity is Nonlinearity.EXPONENTIAL:
        with np.errstate(over="ignore"):
            values = np.exp(u)
        if not np.all(np.isfinite(values)):
            raise DivergenceError(f"exp overflow in {p.name}: max(u) = {np.max(u):.3e}")
        return values, values
    if p.nonlinearity is Nonlinearity.CUBIC:
        with np.errstate(over="ignore", invalid="ignore"):
            values, derivative = u ** 3, 3.0 * u ** 2
        if not np.all(np.isfinite(values)):
            raise DivergenceError(f"cubic term overflow in {p.name}")
        return values, derivative
    zeros = np.zeros_like(u)
    return zeros, zeros


def residual(p: NonlinearProblem, u: np.ndarray) -> np.ndarray:
    """
    Evaluate F(u) = A u - lambda d(u) - b.

    :raises DivergenceError: If d(u) overflows.
    """
    u = _check_length(p, u)
    values, _ = _term(p, u)
    F = spmv(p.A, u) - p.lam * values
    if p.b is not None:
        F -= p.b
    return F


def jacobian(p: NonlinearProblem, u: np.ndarray) -> SparseMatrix:
    """
    Evaluate J(u) = A - lambda diag(d'(u)).

    The result keeps A's pattern plus the diagonal and is exactly symmetric.
    """
    u = _check_length(p, u)
    _, derivative = _term(p, u)
    if p.nonlinearity is Nonlinearity.LINEAR:
        return p.A
    J = p.A.csr + sps.diags(-p.lam * derivative, format="csr")
    return SparseMatrix.from_any(J, symmetric=True)


def bratu(m: int, lam: float = -1.0) -> NonlinearProblem:
    """Bratu problem on the m x m grid Laplacian."""
    if lam > 0:
        logger.warning(f"Bratu with lambda = {lam:g} > 0 may produce indefinite Jacobians")
    return NonlinearProblem(laplacian_2d(m), Nonlinearity.EXPONENTIAL, lam=lam, name=f"bratu(m={m})")


def phi2(m: int, lam: float = -1.0) -> NonlinearProblem:
    """PHI-2 problem A u + u^3 = 0 on the m x m grid Laplacian."""
    return NonlinearProblem(laplacian_2d(m), Nonlinearity.CUBIC, lam=lam, name=f"phi2(m={m})")


def linear_problem(A: SparseMatrix, b: np.ndarray, name: str = "linear") -> NonlinearProblem:
    b = np.asarray(b, dtype=np.float64)
    if b.shape != (A.n,):
        raise DimensionMismatchError(A.n, b.shape[0] if b.ndim else 0, what="right-hand side")
    return NonlinearProblem(A, Nonlinearity.LINEAR, lam=0.0, b=b, name=name)


def load_mm_problem(path: str, nonlinearity: Nonlinearity = Nonlinearity.CUBIC, lam: float = -1.0) -> NonlinearProblem:
    """
    Attach a nonlinearity to a matrix read from a Matrix Market file.

    :raises MatrixMarketError: On malformed or non-symmetric files.
    """
    A = read_matrix_market(path)
    if not isinstance(nonlinearity, Nonlinearity):
        nonlinearity = Nonlinearity.parse(nonlinearity)
    logger.info(f"Loaded {path}: n={A.n}, nnz={A.nnz}, nonlinearity={nonlinearity.value}")
    return NonlinearProblem(A, nonlinearity, lam=lam, name=f"mm({path})")


def initial_guess(n: int, value: float = DEFAULT_INITIAL_VALUE) -> np.ndarray:
    return np.full(n, value)
