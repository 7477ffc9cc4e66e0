"""
Newton-Grassmann solver for the leftmost eigenpair of an SPD matrix.

Each outer step solves the projected correction equation
(I - u u^T)(A - theta I)(I - u u^T) s = -r by PCG, preconditioned with the
quasi-Newton operator deflated against u, and sets u <- (u + s) / ||u + s||.
"""

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np

from linalg.sparse import SparseMatrix, spmv
from preconditioners.base import BasePreconditioner, build_base_preconditioner
from preconditioners.quasi_newton import QuasiNewtonPreconditioner
from preconditioners.window import SR1Acceptance, UpdateDecision, UpdateKind, UpdateReason
from services.krylov import Operator, PcgConfig, PcgFlag, pcg
from utils.exceptions import PreconditionerError, SolverBreakdownError

logger = logging.getLogger("qnprec.eigensolver")


@dataclass
class EigenConfig:
    outer_tol_factor: float = 1e-8
    warmup_tol_factor: float = 1e-2
    warmup_max_iters: int = 50
    inner_rel_tol: float = 1e-1
    inner_max_iters: int = 50
    outer_max_iters: int = 100
    update_kind: UpdateKind = UpdateKind.NO_UPDATE
    kmax: int = 10
    spd_policy: bool = True
    scaling_margin: Optional[float] = None
    r_skip: float = 1e-4
    sr1_acceptance: SR1Acceptance = SR1Acceptance.AGGREGATE
    precond: str = "ic0"
    shift_retries: int = 5
    shift_start: float = 1e-3
    beta_iters: int = 50

    def __post_init__(self) -> None:
        for name in ("outer_tol_factor", "warmup_tol_factor", "inner_rel_tol"):
            value = getattr(self, name)
            if not 0.0 < value < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {value}")
        self.update_kind = UpdateKind(self.update_kind)
        self.sr1_acceptance = SR1Acceptance(self.sr1_acceptance)

    @classmethod
    def from_config(cls, section: Dict, precond_section: Optional[Dict] = None) -> "EigenConfig":
        precond_section = precond_section or {}
        return cls(
            outer_tol_factor=section.get("outer_tol_factor", 1e-8),
            warmup_tol_factor=section.get("warmup_tol_factor", 1e-2),
            warmup_max_iters=section.get("warmup_max_iters", 50),
            inner_rel_tol=section.get("inner_rel_tol", 1e-1),
            inner_max_iters=section.get("inner_max_iters", 50),
            outer_max_iters=section.get("outer_max_iters", 100),
            update_kind=UpdateKind(section.get("update", "none")),
            kmax=section.get("kmax", 10),
            spd_policy=section.get("spd_policy", True),
            scaling_margin=section.get("scaling_margin"),
            r_skip=section.get("r_skip", 1e-4),
            sr1_acceptance=SR1Acceptance(section.get("sr1_acceptance", "aggregate")),
            precond=section.get("precond", "ic0"),
            shift_retries=precond_section.get("ic_shift_retries", 5),
            shift_start=precond_section.get("ic_shift_start", 1e-3),
            beta_iters=precond_section.get("beta_iters", 50),
        )


@dataclass(frozen=True)
class EigenRecord:
    k: int
    theta: float
    residual_norm: float
    eta: float
    inner_iters: int
    flag: PcgFlag
    decision: UpdateDecision


@dataclass(frozen=True)
class EigenStep:
    """
    What a step observer sees after outer step k.

    u is the Ritz vector the correction s was computed against; preconditioner
    is the live operator of the run.
    """

    k: int
    theta: float
    u: np.ndarray
    s: np.ndarray
    y: np.ndarray
    decision: UpdateDecision
    preconditioner: QuasiNewtonPreconditioner


@dataclass
class EigenTrace:
    records: List[EigenRecord] = field(default_factory=list)
    warmup_iters: int = 0
    warmup_lin: int = 0
    converged: bool = False
    eigenvalue: float = float("nan")
    final_residual_norm: float = float("nan")
    wall_time: float = 0.0

    @property
    def nlit(self) -> int:
        return len(self.records)

    @property
    def totlin(self) -> int:
        return sum(record.inner_iters for record in self.records)

    def thetas(self) -> np.ndarray:
        return np.array([record.theta for record in self.records] + [self.eigenvalue])

    def summary(self) -> str:
        status = "converged" if self.converged else "not converged"
        return (f"{status}: lambda={self.eigenvalue:.12g} nlit={self.nlit} totlin={self.totlin} "
                f"warmup_lin={self.warmup_lin} wall_time={self.wall_time:.3f}s")


def rayleigh_quotient(A: SparseMatrix, u: np.ndarray) -> float:
    """
    Return u^T A u / u^T u.

    :raises ValueError: For the zero vector.
    """
    uu = float(u @ u)
    if uu == 0.0:
        raise ValueError("Rayleigh quotient of the zero vector")
    return float(u @ spmv(A, u)) / uu


def projected_apply(A: SparseMatrix, theta: float, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Return (I - u u^T)(A - theta I)(I - u u^T) v for unit u."""
    w = v - u * (u @ v)
    t = spmv(A, w) - theta * w
    return t - u * (u @ t)


def projected_precond_apply(P: Operator, u: np.ndarray, v: np.ndarray, Pu: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Deflated preconditioner z = P v - P u (u^T P v) / (u^T P u), so z is orthogonal to u.

    :param P: SPD preconditioner operator.
    :param u: Unit vector to deflate.
    :param v: Vector to precondition.
    :param Pu: P u, when already known.
    :raises PreconditionerError: If u^T P u <= 0.
    """
    if Pu is None:
        Pu = P(u)
    uPu = u @ Pu
    if not uPu > 0.0:
        raise PreconditionerError(f"indefinite preconditioner in deflation: u^T P u = {uPu:.3e}")
    Pv = P(v)
    return Pv - Pu * ((u @ Pv) / uPu)


def _residual(A: SparseMatrix, u: np.ndarray) -> tuple[float, np.ndarray]:
    Au = spmv(A, u)
    theta = float(u @ Au)
    return theta, Au - theta * u


def _warm_up(A: SparseMatrix, u: np.ndarray, base: BasePreconditioner, cfg: EigenConfig,
             trace: EigenTrace) -> tuple[np.ndarray, float, np.ndarray]:
    """Preconditioned inverse iteration until ||r|| < theta * warmup_tol_factor."""
    theta, r = _residual(A, u)
    inner = PcgConfig(rel_tol=1e-2, max_iters=max(1, cfg.inner_max_iters))
    while np.linalg.norm(r) >= theta * cfg.warmup_tol_factor and trace.warmup_iters < cfg.warmup_max_iters:
        outcome = pcg(A.__matmul__, u, base.apply, inner)
        trace.warmup_iters += 1
        trace.warmup_lin += outcome.iters
        if outcome.flag.is_breakdown:
            raise SolverBreakdownError(f"PCG {outcome.flag.value} during warm-up", flag=outcome.flag, trace=trace)
        u = outcome.x / np.linalg.norm(outcome.x)
        theta, r = _residual(A, u)
    logger.info(f"Warm-up: {trace.warmup_iters} inverse iterations, {trace.warmup_lin} PCG steps, theta={theta:.10g}")
    return u, theta, r


def newton_grassmann(A: SparseMatrix, u0: np.ndarray, cfg: Optional[EigenConfig] = None,
                     base: Optional[BasePreconditioner] = None,
                     observer: Optional[Callable[[EigenStep], None]] = None) -> tuple[float, np.ndarray, EigenTrace]:
    """
    Compute the leftmost eigenpair of the SPD matrix A.

    The base preconditioner is built once from A (optionally scaled) and the
    update window collects s = correction and y = (I - u+ u+^T)(r+ - r).

    :param A: SPD matrix.
    :param u0: Nonzero starting vector.
    :param cfg: Solver configuration.
    :param base: Prebuilt base preconditioner, built from A when omitted.
    :param observer: Called after every outer step.
    :return: Tuple of (eigenvalue, unit eigenvector, trace).
    :raises SolverBreakdownError: If PCG breaks down; the trace is attached.
    """
    cfg = cfg or EigenConfig()
    start = time.perf_counter()
    trace = EigenTrace()
    norm0 = np.linalg.norm(u0)
    if norm0 == 0.0:
        raise ValueError("starting vector must be nonzero")
    u = np.asarray(u0, dtype=np.float64) / norm0

    if base is None:
        base = build_base_preconditioner(A, cfg.precond, shift_retries=cfg.shift_retries, shift_start=cfg.shift_start,
                                         scaling_margin=cfg.scaling_margin, beta_iters=cfg.beta_iters)
    qn = QuasiNewtonPreconditioner(base, cfg.update_kind, cfg.kmax, r_skip=cfg.r_skip,
                                   spd_policy=cfg.spd_policy, acceptance=cfg.sr1_acceptance)
    logger.info(f"Newton-Grassmann (n={A.n}): P0={base.describe()}, update={cfg.update_kind.value}, kmax={cfg.kmax}")

    u, theta, r = _warm_up(A, u, base, cfg, trace)
    inner = PcgConfig(rel_tol=cfg.inner_rel_tol, max_iters=cfg.inner_max_iters)
    for k in range(cfg.outer_max_iters):
        residual_norm = float(np.linalg.norm(r))
        if residual_norm < theta * cfg.outer_tol_factor:
            trace.converged = True
            break
        Pu = qn.apply(u)
        try:
            outcome = pcg(lambda v: projected_apply(A, theta, u, v), -r,
                          lambda v: projected_precond_apply(qn.apply, u, v, Pu), inner)
        except PreconditionerError as e:
            raise SolverBreakdownError(f"{e} at outer iteration {k}", flag=PcgFlag.BREAKDOWN_RZ, trace=trace)
        if outcome.flag.is_breakdown:
            trace.records.append(EigenRecord(k, theta, residual_norm, inner.rel_tol, outcome.iters, outcome.flag,
                                             UpdateDecision(False, UpdateReason.DISABLED, 0.0)))
            trace.wall_time = time.perf_counter() - start
            raise SolverBreakdownError(f"PCG {outcome.flag.value} at outer iteration {k}", flag=outcome.flag,
                                       trace=trace)

        s = outcome.x
        t = u + s
        u_next = t / np.linalg.norm(t)
        theta_next, r_next = _residual(A, u_next)
        y = r_next - r
        y -= u_next * (u_next @ y)
        if cfg.update_kind is UpdateKind.NO_UPDATE:
            decision = UpdateDecision(False, UpdateReason.DISABLED, 0.0)
        else:
            decision = qn.push(s, y)
        trace.records.append(EigenRecord(k, theta, residual_norm, inner.rel_tol, outcome.iters, outcome.flag, decision))
        logger.info(f"outer {k:3d}: theta={theta:.12g} ||r||={residual_norm:.3e} inner={outcome.iters:3d} "
                    f"update={decision.reason.value}")
        if observer is not None:
            observer(EigenStep(k, theta, u, s, y, decision, qn))
        u, theta, r = u_next, theta_next, r_next
    else:
        trace.converged = bool(np.linalg.norm(r) < theta * cfg.outer_tol_factor)

    trace.eigenvalue = theta
    trace.final_residual_norm = float(np.linalg.norm(r))
    trace.wall_time = time.perf_counter() - start
    if not trace.converged:
        logger.warning(f"Eigensolver stopped after {trace.nlit} outer iterations, ||r|| = {trace.final_residual_norm:.3e}")
    logger.info(f"Eigensolver {trace.summary()}")
    return theta, u, trace
