"""
Preconditioned conjugate gradient for SPD systems with an operator-valued
preconditioner.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Dict, Optional

import numpy as np

from linalg.kernels import axpy, dot, norm2
from utils.exceptions import DimensionMismatchError

logger = logging.getLogger("qnprec.krylov")

Operator = Callable[[np.ndarray], np.ndarray]


class PcgFlag(str, Enum):
    CONVERGED = "converged"
    MAX_ITERS = "max_iters"
    BREAKDOWN_PAP = "breakdown_pAp"
    BREAKDOWN_RZ = "breakdown_rz"

    @property
    def is_breakdown(self) -> bool:
        return self in (PcgFlag.BREAKDOWN_PAP, PcgFlag.BREAKDOWN_RZ)


@dataclass(frozen=True)
class PcgConfig:
    rel_tol: float = 1e-6
    max_iters: int = 2000

    def __post_init__(self) -> None:
        if not 0.0 < self.rel_tol < 1.0:
            raise ValueError(f"PCG relative tolerance must lie in (0, 1), got {self.rel_tol}")
        if self.max_iters < 1:
            raise ValueError(f"PCG needs at least one iteration, got {self.max_iters}")

    @classmethod
    def from_config(cls, section: Dict) -> "PcgConfig":
        return cls(rel_tol=section.get("rel_tol", 1e-6), max_iters=section.get("max_iters", 2000))


@dataclass
class PcgOutcome:
    x: np.ndarray
    iters: int
    rel_residuals: np.ndarray
    flag: PcgFlag

    @property
    def converged(self) -> bool:
        return self.flag is PcgFlag.CONVERGED

    @property
    def final_rel_residual(self) -> float:
        return float(self.rel_residuals[-1])


def pcg(
    apply_A: Operator,
    b: np.ndarray,
    apply_P: Operator,
    cfg: Optional[PcgConfig] = None,
    x0: Optional[np.ndarray] = None,
) -> PcgOutcome:
    """
    Solve A x = b by preconditioned conjugate gradients.

    The recurrence residual drives the search directions; the stopping test
    uses the true residual b - A x, recomputed every iteration. The residual
    history starts with the residual of x0.

    :param apply_A: Symmetric operator, positive definite on the working subspace.
    :param b: Right-hand side.
    :param apply_P: SPD preconditioner operator.
    :param cfg: Tolerance and iteration cap.
    :param x0: Initial guess, zero by default.
    :return: The outcome; breakdowns return the last iterate with their flag.
    """
    cfg = cfg or PcgConfig()
    b = np.asarray(b, dtype=np.float64)
    n = b.shape[0]
    if x0 is None:
        x = np.zeros(n)
        r = b.copy()
    else:
        x = np.array(x0, dtype=np.float64, copy=True)
        if x.shape != (n,):
            raise DimensionMismatchError(n, x.shape[0] if x.ndim else 0, what="initial guess")
        r = b - apply_A(x)

    b_norm = norm2(b)
    if b_norm == 0.0:
        return PcgOutcome(x=np.zeros(n), iters=0, rel_residuals=np.zeros(1), flag=PcgFlag.CONVERGED)

    history = [norm2(r) / b_norm]
    if history[0] <= cfg.rel_tol:
        return PcgOutcome(x=x, iters=0, rel_residuals=np.array(history), flag=PcgFlag.CONVERGED)

    z = apply_P(r)
    rz = dot(r, z)
    if not rz > 0.0:
        logger.debug(f"PCG breakdown before the first step: r^T z = {rz:.3e}")
        return PcgOutcome(x=x, iters=0, rel_residuals=np.array(history), flag=PcgFlag.BREAKDOWN_RZ)
    p = z.copy()
    eps = np.finfo(float).eps

    flag = PcgFlag.MAX_ITERS
    iters = 0
    while iters < cfg.max_iters:
        Ap = apply_A(p)
        pAp = dot(p, Ap)
        if not pAp > eps * dot(p, p):
            logger.debug(f"PCG breakdown at iteration {iters}: p^T A p = {pAp:.3e}")
            flag = PcgFlag.BREAKDOWN_PAP
            break
        alpha = rz / pAp
        x = axpy(alpha, p, x)
        r = axpy(-alpha, Ap, r)
        iters += 1
        history.append(norm2(b - apply_A(x)) / b_norm)
        if history[-1] <= cfg.rel_tol:
            flag = PcgFlag.CONVERGED
            break
        z = apply_P(r)
        rz_next = dot(r, z)
        if not rz_next > 0.0:
            logger.debug(f"PCG breakdown at iteration {iters}: r^T z = {rz_next:.3e}")
            flag = PcgFlag.BREAKDOWN_RZ
            break
        p = axpy(rz_next / rz, p, z)
        rz = rz_next

    return PcgOutcome(x=x, iters=iters, rel_residuals=np.array(history), flag=flag)
