"""
Initial preconditioners P0 = B0^{-1}.

Identity, Jacobi and incomplete Cholesky (no-fill and drop-tolerance) with
the scalar factor scaling used to push the preconditioned spectrum below one.
"""

import logging
from dataclasses import dataclass, replace
from functools import cached_property
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sps
import scipy.sparse.linalg as spla

from linalg.kernels import dot, scale
from linalg.sparse import SparseMatrix, spmv
from utils.exceptions import DimensionMismatchError, FactorizationBreakdownError, PreconditionerError

logger = logging.getLogger("qnprec.base")


@dataclass(frozen=True)
class TriangularFactor:
    """
    Lower-triangular incomplete Cholesky factor with scalar scaling.

    The preconditioner is ((sigma L)(sigma L)^T)^{-1}; sigma is kept apart
    from L so the unscaled factor stays reusable.
    """

    L: sps.csr_matrix
    sigma: float = 1.0
    source_nnz: int = 0

    @property
    def n(self) -> int:
        return self.L.shape[0]

    @property
    def fill_ratio(self) -> float:
        return self.L.nnz / self.source_nnz if self.source_nnz else 1.0

    @cached_property
    def _solver(self):
        # Natural ordering and no pivoting: SuperLU reproduces L itself.
        return spla.splu(self.L.tocsc(), permc_spec="NATURAL", diag_pivot_thresh=0.0,
                         options={"SymmetricMode": True})

    def solve(self, r: np.ndarray) -> np.ndarray:
        """Return ((sigma L)(sigma L)^T)^{-1} r by two triangular solves."""
        forward = self._solver.solve(r)
        return self._solver.solve(forward, trans="T") / (self.sigma * self.sigma)


class BasePreconditioner:
    """
    SPD initial preconditioner applied as r -> P0 r.
    """

    name = "base"

    def __init__(self, n: int) -> None:
        self.n = n

    def _apply(self, r: np.ndarray) -> np.ndarray:
        raise NotImplementedError()

    def apply(self, r: np.ndarray) -> np.ndarray:
        r = np.asarray(r, dtype=np.float64)
        if r.shape != (self.n,):
            raise DimensionMismatchError(self.n, r.shape[0] if r.ndim else 0)
        return self._apply(r)

    def __call__(self, r: np.ndarray) -> np.ndarray:
        return self.apply(r)

    def describe(self) -> str:
        return self.name


class IdentityPreconditioner(BasePreconditioner):
    name = "identity"

    def _apply(self, r: np.ndarray) -> np.ndarray:
        return r.copy()


class JacobiPreconditioner(BasePreconditioner):
    """
    Diagonal preconditioner B0 = diag(J(x0)).
    """

    name = "jacobi"

    def __init__(self, diagonal: np.ndarray) -> None:
        diagonal = np.asarray(diagonal, dtype=np.float64)
        if np.any(diagonal == 0.0):
            raise PreconditionerError(f"Jacobi preconditioner has a zero diagonal entry at {int(np.argmin(np.abs(diagonal)))}")
        super().__init__(diagonal.shape[0])
        self.diagonal = diagonal

    def _apply(self, r: np.ndarray) -> np.ndarray:
        return r / self.diagonal


class IncompleteCholeskyPreconditioner(BasePreconditioner):
    def __init__(self, factor: TriangularFactor, label: str = "ic") -> None:
        super().__init__(factor.n)
        self.factor = factor
        self.name = label

    def _apply(self, r: np.ndarray) -> np.ndarray:
        return self.factor.solve(r)

    def describe(self) -> str:
        return f"{self.name} (sigma={self.factor.sigma:.4g}, fill={self.factor.fill_ratio:.2f})"


class OperatorPreconditioner(BasePreconditioner):
    """Wraps an arbitrary callable, e.g. an exact inverse used in tests."""

    name = "operator"

    def __init__(self, n: int, operator: Callable[[np.ndarray], np.ndarray], label: str = "operator") -> None:
        super().__init__(n)
        self._operator = operator
        self.name = label

    def _apply(self, r: np.ndarray) -> np.ndarray:
        return np.asarray(self._operator(r), dtype=np.float64)


def ic_factor(A: SparseMatrix, drop_tol: Optional[float] = None) -> TriangularFactor:
    """
    Left-looking incomplete Cholesky factorization A ~ L L^T.

    With drop_tol None the pattern of L equals lower(A) (IC(0)); otherwise
    fill is allowed and an off-diagonal entry l_ij is discarded when
    |l_ij| < drop_tol * ||A[:, j]||_2.

    :param A: SPD matrix with full symmetric pattern.
    :param drop_tol: Drop tolerance, or None for no fill.
    :return: The factor with sigma = 1.
    :raises FactorizationBreakdownError: On a nonpositive pivot.
    """
    if drop_tol is not None and drop_tol <= 0:
        raise ValueError(f"drop tolerance must be positive, got {drop_tol}")
    n = A.n
    lower_csc = sps.tril(A.csr, format="csc")
    lower_csc.sort_indices()
    column_norms = np.sqrt(np.asarray(A.csr.multiply(A.csr).sum(axis=0)).ravel())

    col_rows: list[np.ndarray] = [None] * n
    col_vals: list[np.ndarray] = [None] * n
    diag = np.empty(n)
    row_entries: list[list[tuple[int, float]]] = [[] for _ in range(n)]
    work = np.zeros(n)

    for j in range(n):
        start, end = lower_csc.indptr[j], lower_csc.indptr[j + 1]
        a_rows = lower_csc.indices[start:end]
        if a_rows.size == 0 or a_rows[0] != j:
            raise FactorizationBreakdownError(j, 0.0)
        work[a_rows] = lower_csc.data[start:end]
        touched = [a_rows]
        for k, l_jk in row_entries[j]:
            rows_k, vals_k = col_rows[k], col_vals[k]
            first = np.searchsorted(rows_k, j)
            rows_tail = rows_k[first:]
            work[rows_tail] -= vals_k[first:] * l_jk
            touched.append(rows_tail)
        rows = np.unique(np.concatenate(touched))
        values = work[rows]
        work[rows] = 0.0
        # rows[0] == j: every touched row index is >= j
        pivot = values[0]
        if not pivot > 0.0:
            raise FactorizationBreakdownError(j, float(pivot))
        l_jj = np.sqrt(pivot)
        diag[j] = l_jj

        off_rows = rows[rows > j]
        off_vals = values[rows > j] / l_jj
        if drop_tol is None:
            keep = np.isin(off_rows, a_rows, assume_unique=True)
        else:
            keep = np.abs(off_vals) >= drop_tol * column_norms[j]
        off_rows, off_vals = off_rows[keep], off_vals[keep]
        col_rows[j], col_vals[j] = off_rows, off_vals
        for i, l_ij in zip(off_rows.tolist(), off_vals.tolist()):
            row_entries[i].append((j, l_ij))

    counts = np.array([1 + rows.size for rows in col_rows])
    indptr = np.concatenate(([0], np.cumsum(counts)))
    indices = np.concatenate([np.concatenate(([j], col_rows[j])) for j in range(n)]).astype(np.int64)
    data = np.concatenate([np.concatenate(([diag[j]], col_vals[j])) for j in range(n)])
    L = sps.csc_matrix((data, indices, indptr), shape=(n, n)).tocsr()
    L.sort_indices()
    return TriangularFactor(L=L, sigma=1.0, source_nnz=lower_csc.nnz)


def apply_base(P0: BasePreconditioner, r: np.ndarray) -> np.ndarray:
    """Return P0 r."""
    return P0.apply(r)


def estimate_beta(A: SparseMatrix, P0: Callable[[np.ndarray], np.ndarray], iters: int = 50, seed: int = 0) -> float:
    """
    Estimate lambda_max(P0 A) by power iteration.

    P0 A is self-adjoint in the A-inner product, so the Rayleigh quotients
    <P0 A x, x>_A / <x, x>_A form a nondecreasing sequence.

    :param A: SPD matrix.
    :param P0: SPD preconditioner.
    :param iters: Number of power steps.
    :param seed: Seed of the starting vector.
    :return: The last Rayleigh quotient.
    """
    x = np.random.default_rng(seed).standard_normal(A.n)
    ax = spmv(A, x)
    x_norm = np.sqrt(dot(x, ax))
    x, ax = scale(1.0 / x_norm, x), scale(1.0 / x_norm, ax)
    estimate = 0.0
    for _ in range(max(1, iters)):
        px = P0(ax)
        estimate = dot(ax, px)
        apx = spmv(A, px)
        px_norm = np.sqrt(dot(px, apx))
        if px_norm == 0.0:
            break
        x, ax = scale(1.0 / px_norm, px), scale(1.0 / px_norm, apx)
    return estimate


def scale_for_spd(factor: TriangularFactor, beta_estimate: float, margin: float = 1.1) -> TriangularFactor:
    """
    Scale the factor so that lambda_max(P0 A) drops below one.

    :param factor: Unscaled (or previously scaled) factor.
    :param beta_estimate: Estimate of lambda_max(P0 A) for the factor as given.
    :param margin: Safety margin, > 1.
    :return: Factor with sigma = max(1, sqrt(beta_estimate * margin)).
    """
    if beta_estimate <= 0:
        raise ValueError(f"beta estimate must be positive, got {beta_estimate}")
    if margin <= 1:
        raise ValueError(f"scaling margin must exceed 1, got {margin}")
    sigma = max(1.0, float(np.sqrt(beta_estimate * margin)))
    return replace(factor, sigma=sigma)


def parse_precond_choice(choice: str) -> tuple[str, Optional[float]]:
    """
    Split a textual preconditioner choice.

    :param choice: One of "identity", "jacobi", "ic0" or "ict:<tau>".
    :return: Tuple of (kind, drop tolerance).
    """
    kind, _, argument = choice.strip().lower().partition(":")
    if kind in ("identity", "jacobi", "ic0") and not argument:
        return kind, None
    if kind == "ict":
        try:
            tau = float(argument)
        except ValueError:
            raise ValueError(f"ict needs a numeric drop tolerance, got '{argument}'")
        if tau <= 0:
            raise ValueError(f"ict drop tolerance must be positive, got {tau}")
        return kind, tau
    raise ValueError(f"unknown preconditioner '{choice}'")


def build_base_preconditioner(
    J: SparseMatrix,
    choice: str = "ic0",
    shift_retries: int = 5,
    shift_start: float = 1e-3,
    scaling_margin: Optional[float] = None,
    beta_iters: int = 50,
) -> BasePreconditioner:
    """
    Build the initial preconditioner from a Jacobian.

    Incomplete Cholesky breakdowns are retried on A + alpha diag(A) with
    alpha doubling from shift_start. With a scaling margin the IC factor is
    scaled after estimating lambda_max(P0 J).

    :param J: The Jacobian J(x0) (or the matrix A of an eigenproblem).
    :param choice: Textual choice, see parse_precond_choice.
    :param shift_retries: Maximum number of shifted retries.
    :param shift_start: First shift alpha.
    :param scaling_margin: Margin for scale_for_spd, or None to skip scaling.
        Identity and Jacobi are never scaled; a margin given with them is
        ignored with a warning.
    :param beta_iters: Power steps for the beta estimate.
    """
    kind, tau = parse_precond_choice(choice)
    if scaling_margin is not None and kind in ("identity", "jacobi"):
        logger.warning(f"scaling_margin={scaling_margin:g} applies only to incomplete Cholesky; {kind} is left unscaled")
    if kind == "identity":
        return IdentityPreconditioner(J.n)
    if kind == "jacobi":
        return JacobiPreconditioner(J.diagonal())

    label = "ic0" if tau is None else f"ict({tau:g})"
    alpha = 0.0
    matrix = J
    for attempt in range(shift_retries + 1):
        try:
            factor = ic_factor(matrix, drop_tol=tau)
            break
        except FactorizationBreakdownError as e:
            if attempt == shift_retries:
                raise
            alpha = shift_start if alpha == 0.0 else 2.0 * alpha
            logger.warning(f"{label} broke down at column {e.column}; retrying with diagonal shift {alpha:g}")
            shifted = J.csr + alpha * sps.diags(J.diagonal(), format="csr")
            matrix = SparseMatrix.from_any(shifted, symmetric=True)

    preconditioner = IncompleteCholeskyPreconditioner(factor, label=label)
    if scaling_margin is not None:
        beta = estimate_beta(J, preconditioner, iters=beta_iters)
        preconditioner = IncompleteCholeskyPreconditioner(scale_for_spd(factor, beta, scaling_margin), label=label)
        logger.info(f"Estimated beta={beta:.4f} for {label}; scaled factor by sigma={preconditioner.factor.sigma:.4f}")
    return preconditioner
