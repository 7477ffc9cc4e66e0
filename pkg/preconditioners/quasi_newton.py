"""
Quasi-Newton preconditioner updates over a base preconditioner.

Application of P_k by the L-BFGS two-loop recursion, the compact L-BFGS
inverse formula and the compact L-SR1 formula P_k = P0 + Q M^{-1} Q^T, plus
the acceptance tests that guard every new pair.
"""

import logging
from typing import Iterable, Optional

import numpy as np
import scipy.linalg as sla

from preconditioners.base import BasePreconditioner, apply_base
from preconditioners.window import QNWindow, SR1Acceptance, UpdateDecision, UpdateKind, UpdateReason
from utils.exceptions import DenseLimitError, DimensionMismatchError, PreconditionerError

logger = logging.getLogger("qnprec.quasi_newton")


def apply_lbfgs_two_loop(w: QNWindow, P0: BasePreconditioner, r: np.ndarray) -> np.ndarray:
    """
    Return P_k r by the two-loop recursion.

    :param w: Window of L-BFGS pairs.
    :param P0: Base preconditioner.
    :param r: Residual; not modified.
    """
    q = np.array(r, dtype=np.float64, copy=True)
    rho = 1.0 / np.diag(w.R)
    alpha = np.empty(w.m)
    for i in reversed(range(w.m)):
        alpha[i] = rho[i] * (w.S[:, i] @ q)
        q -= alpha[i] * w.Y[:, i]
    r_hat = apply_base(P0, q)
    for i in range(w.m):
        beta = rho[i] * (w.Y[:, i] @ r_hat)
        r_hat += (alpha[i] - beta) * w.S[:, i]
    return r_hat


def apply_lbfgs_compact(w: QNWindow, P0: BasePreconditioner, r: np.ndarray) -> np.ndarray:
    """
    Return P_k r with the compact inverse L-BFGS formula.

    Two dense products S^T r and Z^T r, two m x m triangular solves with R,
    and one block update.
    """
    r_hat = apply_base(P0, r)
    if w.m == 0:
        return r_hat
    w1 = w.S.T @ r
    w2 = w.Z.T @ r
    q2 = sla.solve_triangular(w.R, w1, lower=False, check_finite=False)
    q1 = sla.solve_triangular(w.R, w2 - w.H @ q2, trans="T", lower=False, check_finite=False)
    r_hat -= w.S @ q1 + w.Z @ q2
    return r_hat


def apply_lsr1_compact(w: QNWindow, P0: BasePreconditioner, r: np.ndarray) -> np.ndarray:
    """
    Return P_k r = P0 r + Q M^{-1} Q^T r.

    M is symmetric but possibly indefinite; it is solved with the
    Bunch-Kaufman symmetric-indefinite factorization.
    """
    r_hat = apply_base(P0, r)
    if w.m == 0:
        return r_hat
    w1 = w.Q.T @ r
    try:
        w2 = sla.solve(w.M, w1, assume_a="sym", check_finite=False)
    except sla.LinAlgError as e:
        raise PreconditionerError(f"singular L-SR1 middle matrix: {e}")
    r_hat += w.Q @ w2
    return r_hat


_APPLY = {
    UpdateKind.LBFGS_TWO_LOOP: apply_lbfgs_two_loop,
    UpdateKind.LBFGS_COMPACT: apply_lbfgs_compact,
    UpdateKind.LSR1_COMPACT: apply_lsr1_compact,
}


def apply_window(kind: UpdateKind, w: QNWindow, P0: BasePreconditioner, r: np.ndarray) -> np.ndarray:
    if kind is UpdateKind.NO_UPDATE:
        return apply_base(P0, r)
    return _APPLY[kind](w, P0, r)


def push_pair(
    w: QNWindow,
    s: np.ndarray,
    y: np.ndarray,
    P0: BasePreconditioner,
    kind: UpdateKind,
    r_skip: float = 1e-4,
    spd_policy: bool = False,
    acceptance: SR1Acceptance = SR1Acceptance.AGGREGATE,
) -> UpdateDecision:
    """
    Offer a new (s, y) pair to the window.

    L-BFGS kinds need s^T y > 0. L-SR1 needs
    |y^T (s - P y)| >= r_skip ||y|| ||s - P y||, with P the current operator,
    and under spd_policy a positive denominator and a positive definite M
    after bordering. A rejected pair leaves the window untouched.

    :param w: Window, mutated on acceptance.
    :param s: Step.
    :param y: Residual difference.
    :param P0: Base preconditioner.
    :param kind: Update kind.
    :param r_skip: SR1 skip-test ratio.
    :param spd_policy: Require a positive SR1 denominator.
    :param acceptance: Operator used in the SR1 test.
    :return: The decision.
    """
    s = np.asarray(s, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    for vector in (s, y):
        if vector.shape != (w.n,):
            raise DimensionMismatchError(w.n, vector.shape[0] if vector.ndim else 0)
    if kind is UpdateKind.NO_UPDATE:
        return UpdateDecision(False, UpdateReason.DISABLED, 0.0)

    z = apply_base(P0, y)
    if kind.is_lbfgs:
        curvature = float(s @ y)
        if not curvature > 0.0:
            logger.debug(f"Rejected L-BFGS pair: s^T y = {curvature:.3e}")
            return UpdateDecision(False, UpdateReason.CURVATURE_NONPOSITIVE, curvature)
        if w.full:
            w.shift()
        w.append(s, y, z)
        return UpdateDecision(True, UpdateReason.OK, curvature)

    reference = w if SR1Acceptance(acceptance) is SR1Acceptance.AGGREGATE else w.retained_view()
    v = s - apply_lsr1_compact(reference, P0, y)
    denominator = float(y @ v)
    if denominator == 0.0 or abs(denominator) < r_skip * np.linalg.norm(y) * np.linalg.norm(v):
        logger.debug(f"Skipped L-SR1 pair: denominator {denominator:.3e} too small")
        return UpdateDecision(False, UpdateReason.SR1_DENOMINATOR_SMALL, denominator)
    if spd_policy and denominator < 0.0:
        logger.debug(f"Skipped L-SR1 pair under SPD policy: denominator {denominator:.3e}")
        return UpdateDecision(False, UpdateReason.SR1_DENOMINATOR_NEGATIVE_POLICY, denominator)

    state = w.snapshot()
    if w.full:
        w.shift()
    w.append(s, y, z)
    if w.middle_is_singular():
        w.restore(state)
        return UpdateDecision(False, UpdateReason.SR1_DENOMINATOR_SMALL, denominator)
    if spd_policy and w.middle_eigenvalues()[0] <= 0.0:
        # the bordered M lost definiteness through the shift
        w.restore(state)
        return UpdateDecision(False, UpdateReason.SR1_DENOMINATOR_NEGATIVE_POLICY, denominator)
    return UpdateDecision(True, UpdateReason.OK, denominator)


def materialize_dense(
    w: QNWindow,
    P0: BasePreconditioner,
    kind: UpdateKind = UpdateKind.LSR1_COMPACT,
    limit: int = 500,
) -> np.ndarray:
    """
    Dense n x n matrix of the operator, column by column, as applied (not
    symmetrized).

    :raises DenseLimitError: If n exceeds limit.
    """
    if w.n > limit:
        raise DenseLimitError(w.n, limit)
    identity = np.eye(w.n)
    columns = [apply_window(kind, w, P0, identity[:, j]) for j in range(w.n)]
    return np.column_stack(columns)


def materialize_direct_lbfgs(w: QNWindow, P0_dense: np.ndarray) -> np.ndarray:
    """
    Dense direct compact L-BFGS approximation B_k.

    B_k = B0 - [B0 S, Y] [[S^T B0 S, L], [L^T, -D]]^{-1} [S^T B0; Y^T]
    with B0 = P0^{-1}. Verification oracle only.
    """
    B0 = np.linalg.inv(P0_dense)
    if w.m == 0:
        return B0
    B0S = B0 @ w.S
    middle = np.block([[w.S.T @ B0S, w.L], [w.L.T, -np.diag(w.D)]])
    left = np.column_stack((B0S, w.Y))
    return B0 - left @ np.linalg.solve(middle, left.T)


def dense_bfgs_update(P: np.ndarray, s: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Inverse BFGS update V^T P V + rho s s^T with V = I - rho y s^T."""
    rho = 1.0 / (y @ s)
    V = np.eye(P.shape[0]) - rho * np.outer(y, s)
    return V.T @ P @ V + rho * np.outer(s, s)


def dense_sr1_update(P: np.ndarray, s: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Inverse SR1 update P + v v^T / (y^T v) with v = s - P y."""
    v = s - P @ y
    return P + np.outer(v, v) / (y @ v)


def sequential_dense_operator(
    P0_dense: np.ndarray,
    pairs: Iterable[tuple[np.ndarray, np.ndarray]],
    kind: UpdateKind,
) -> np.ndarray:
    """
    Apply the dense recurrences pair by pair, oldest first.

    :param P0_dense: Dense base preconditioner.
    :param pairs: (s, y) pairs.
    :param kind: LBFGS kinds use the BFGS recurrence, LSR1 the SR1 one.
    """
    P = np.array(P0_dense, dtype=np.float64, copy=True)
    if kind is UpdateKind.NO_UPDATE:
        return P
    update = dense_bfgs_update if kind.is_lbfgs else dense_sr1_update
    for s, y in pairs:
        P = update(P, s, y)
    return P


class QuasiNewtonPreconditioner:
    """
    Callable preconditioner P_k: base preconditioner plus update window.

    :param base: Initial preconditioner P0.
    :param kind: Update kind, fixed for the lifetime of the object.
    :param kmax: Window capacity.
    :param r_skip: SR1 skip-test ratio.
    :param spd_policy: Require positive SR1 denominators.
    :param acceptance: Operator used in the SR1 skip test.
    """

    def __init__(
        self,
        base: BasePreconditioner,
        kind: UpdateKind = UpdateKind.NO_UPDATE,
        kmax: int = 4,
        r_skip: float = 1e-4,
        spd_policy: bool = False,
        acceptance: SR1Acceptance = SR1Acceptance.AGGREGATE,
    ) -> None:
        self.base = base
        self.kind = UpdateKind(kind)
        self.window = QNWindow(base.n, max(1, kmax))
        self.r_skip = r_skip
        self.spd_policy = spd_policy
        self.acceptance = SR1Acceptance(acceptance)

    @property
    def n(self) -> int:
        return self.base.n

    def apply(self, r: np.ndarray) -> np.ndarray:
        return apply_window(self.kind, self.window, self.base, r)

    def __call__(self, r: np.ndarray) -> np.ndarray:
        return self.apply(r)

    def push(self, s: np.ndarray, y: np.ndarray) -> UpdateDecision:
        return push_pair(self.window, s, y, self.base, self.kind, self.r_skip, self.spd_policy, self.acceptance)

    def reset(self, base: Optional[BasePreconditioner] = None) -> None:
        """Clear the window, optionally switching to a new base."""
        if base is not None:
            self.base = base
        self.window = QNWindow(self.base.n, self.window.kmax)

    def materialize(self, limit: int = 500) -> np.ndarray:
        return materialize_dense(self.window, self.base, self.kind, limit=limit)
