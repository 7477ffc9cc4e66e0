"""
Limited-memory window shared by the compact L-BFGS and L-SR1 updates.

Holds S, Y, Z = P0 Y, Q = S - Z together with the small matrices
R (upper triangular, R_ij = s_i^T y_j for i <= j), H = D + Y^T P0 Y and
M = R + R^T - H. New pairs border the small matrices; when the window is
full the oldest column/row block is shifted out first.
"""

from dataclasses import dataclass
from enum import Enum

import numpy as np
import scipy.linalg as sla


class UpdateKind(str, Enum):
    NO_UPDATE = "none"
    LBFGS_TWO_LOOP = "lbfgs-twoloop"
    LBFGS_COMPACT = "lbfgs"
    LSR1_COMPACT = "lsr1"

    @property
    def is_lbfgs(self) -> bool:
        return self in (UpdateKind.LBFGS_TWO_LOOP, UpdateKind.LBFGS_COMPACT)


class UpdateReason(str, Enum):
    OK = "ok"
    CURVATURE_NONPOSITIVE = "curvature_nonpositive"
    SR1_DENOMINATOR_SMALL = "sr1_denominator_small"
    SR1_DENOMINATOR_NEGATIVE_POLICY = "sr1_denominator_negative_policy"
    DISABLED = "disabled"
    DEFERRED = "deferred"


class SR1Acceptance(str, Enum):
    AGGREGATE = "aggregate"
    RETAINED = "retained"


@dataclass(frozen=True)
class UpdateDecision:
    accepted: bool
    reason: UpdateReason
    denominator_value: float = 0.0

    def __post_init__(self) -> None:
        if self.accepted != (self.reason is UpdateReason.OK):
            raise ValueError(f"inconsistent update decision: accepted={self.accepted}, reason={self.reason.value}")


class QNWindow:
    """
    Compact-update state for at most kmax (s, y) pairs.

    :param n: Problem dimension.
    :param kmax: Window capacity.
    """

    def __init__(self, n: int, kmax: int) -> None:
        if kmax < 1:
            raise ValueError(f"window capacity must be at least 1, got {kmax}")
        self.n = n
        self.kmax = kmax
        self.clear()

    def clear(self) -> None:
        self.S = np.empty((self.n, 0))
        self.Y = np.empty((self.n, 0))
        self.Z = np.empty((self.n, 0))
        self.Q = np.empty((self.n, 0))
        self.R = np.empty((0, 0))
        self.H = np.empty((0, 0))
        self.M = np.empty((0, 0))

    @property
    def m(self) -> int:
        return self.S.shape[1]

    @property
    def full(self) -> bool:
        return self.m == self.kmax

    @property
    def D(self) -> np.ndarray:
        return np.diag(self.R).copy()

    @property
    def L(self) -> np.ndarray:
        """Strictly lower part of S^T Y, the L_k of the direct compact formula."""
        return np.tril(self.S.T @ self.Y, k=-1)

    def pairs(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return [(self.S[:, i].copy(), self.Y[:, i].copy()) for i in range(self.m)]

    def snapshot(self) -> dict:
        return {name: getattr(self, name).copy() for name in ("S", "Y", "Z", "Q", "R", "H", "M")}

    def restore(self, state: dict) -> None:
        for name, value in state.items():
            setattr(self, name, value)

    def copy(self) -> "QNWindow":
        clone = QNWindow(self.n, self.kmax)
        clone.restore(self.snapshot())
        return clone

    def shift(self) -> None:
        """Discard the oldest pair, keeping the trailing blocks."""
        self.S, self.Y, self.Z, self.Q = (block[:, 1:] for block in (self.S, self.Y, self.Z, self.Q))
        self.R, self.H, self.M = (block[1:, 1:] for block in (self.R, self.H, self.M))

    def retained_view(self) -> "QNWindow":
        """Window as it will be after the shift the next push performs."""
        clone = self.copy()
        if clone.full:
            clone.shift()
        return clone

    def append(self, s: np.ndarray, y: np.ndarray, z: np.ndarray) -> None:
        """
        Border the window with a new pair; z must equal P0 y.

        :param s: Step.
        :param y: Residual difference.
        :param z: Base preconditioner applied to y.
        """
        q = s - z
        r_border = self.S.T @ y
        h_border = self.Z.T @ y
        m_border = self.Q.T @ y
        self.R = np.block([[self.R, r_border[:, None]], [np.zeros((1, self.m)), np.array([[s @ y]])]])
        self.H = np.block([[self.H, h_border[:, None]], [h_border[None, :], np.array([[(s + z) @ y]])]])
        self.M = np.block([[self.M, m_border[:, None]], [m_border[None, :], np.array([[q @ y]])]])
        self.S = np.column_stack((self.S, s))
        self.Y = np.column_stack((self.Y, y))
        self.Z = np.column_stack((self.Z, z))
        self.Q = np.column_stack((self.Q, q))

    def middle_eigenvalues(self) -> np.ndarray:
        """Eigenvalues of M, ascending."""
        if self.m == 0:
            return np.empty(0)
        return sla.eigvalsh(self.M)

    def middle_is_singular(self) -> bool:
        eigenvalues = self.middle_eigenvalues()
        if eigenvalues.size == 0:
            return False
        magnitudes = np.abs(eigenvalues)
        return bool(magnitudes.min() <= self.m * np.finfo(float).eps * magnitudes.max())
