"""
Inexact Newton driver with quasi-Newton updated preconditioning.

Each outer step solves J(x_k) s_k = -F(x_k) by PCG to the forcing
tolerance, preconditioned by P_k; the pair (s_k, F_{k+1} - F_k) is then
offered to the update window.
"""

import logging
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Optional

import numpy as np

from linalg.sparse import SparseMatrix
from preconditioners.base import build_base_preconditioner
from preconditioners.quasi_newton import QuasiNewtonPreconditioner
from preconditioners.window import SR1Acceptance, UpdateDecision, UpdateKind, UpdateReason
from services.krylov import PcgConfig, PcgFlag, pcg
from services.problems import NonlinearProblem
from utils.exceptions import DivergenceError, SolverBreakdownError

logger = logging.getLogger("qnprec.newton")


class ForcingMode(str, Enum):
    FIXED = "fixed"
    RESIDUAL_PROPORTIONAL = "proportional"


@dataclass(frozen=True)
class Forcing:
    mode: ForcingMode = ForcingMode.FIXED
    eta: float = 1e-6
    c: float = 1.0
    eta_max: float = 0.1

    @classmethod
    def parse(cls, text: str) -> "Forcing":
        """
        Parse "fixed:<eta>" or "proportional:<c>:<eta_max>".

        :raises ValueError: On unknown modes or out-of-range values.
        """
        parts = text.strip().lower().split(":")
        try:
            if parts[0] == "fixed" and len(parts) == 2:
                eta = float(parts[1])
                if not 0.0 < eta < 1.0:
                    raise ValueError(f"fixed forcing must lie in (0, 1), got {eta}")
                return cls(ForcingMode.FIXED, eta=eta)
            if parts[0] in ("proportional", "residual_proportional") and len(parts) == 3:
                c, eta_max = float(parts[1]), float(parts[2])
                if c <= 0.0 or not 0.0 < eta_max < 1.0:
                    raise ValueError(f"proportional forcing needs c > 0 and eta_max in (0, 1), got {c}, {eta_max}")
                return cls(ForcingMode.RESIDUAL_PROPORTIONAL, c=c, eta_max=eta_max)
        except ValueError as e:
            raise ValueError(f"invalid forcing '{text}': {e}")
        raise ValueError(f"invalid forcing '{text}': expected fixed:<eta> or proportional:<c>:<eta_max>")

    def describe(self) -> str:
        if self.mode is ForcingMode.FIXED:
            return f"fixed:{self.eta:g}"
        return f"proportional:{self.c:g}:{self.eta_max:g}"


@dataclass
class NewtonConfig:
    nl_rel_tol: float = 1e-10
    nl_max_iters: int = 50
    forcing: Forcing = field(default_factory=Forcing)
    update_kind: UpdateKind = UpdateKind.NO_UPDATE
    kmax: int = 4
    r_skip: float = 1e-4
    spd_policy: bool = False
    scaling_margin: Optional[float] = None
    sr1_acceptance: SR1Acceptance = SR1Acceptance.AGGREGATE
    rebuild_every: Optional[int] = None
    update_start_ratio: Optional[float] = None
    precond: str = "ic0"
    pcg_max_iters: int = 2000
    shift_retries: int = 5
    shift_start: float = 1e-3
    beta_iters: int = 50

    def __post_init__(self) -> None:
        if not 0.0 < self.nl_rel_tol < 1.0:
            raise ValueError(f"nonlinear tolerance must lie in (0, 1), got {self.nl_rel_tol}")
        if self.kmax < 1:
            raise ValueError(f"kmax must be at least 1, got {self.kmax}")
        self.update_kind = UpdateKind(self.update_kind)
        self.sr1_acceptance = SR1Acceptance(self.sr1_acceptance)
        if isinstance(self.forcing, str):
            self.forcing = Forcing.parse(self.forcing)

    @classmethod
    def from_config(cls, section: Dict, pcg_section: Optional[Dict] = None,
                    precond_section: Optional[Dict] = None) -> "NewtonConfig":
        """
        Build from the "newton" section of config.json.

        :param section: The newton section.
        :param pcg_section: The pcg section, for the inner iteration cap.
        :param precond_section: The precond section, for shift and beta settings.
        """
        pcg_section = pcg_section or {}
        precond_section = precond_section or {}
        return cls(
            nl_rel_tol=section.get("nl_rel_tol", 1e-10),
            nl_max_iters=section.get("nl_max_iters", 50),
            forcing=Forcing.parse(section.get("forcing", "fixed:1e-6")),
            update_kind=UpdateKind(section.get("update", "none")),
            kmax=section.get("kmax", 4),
            r_skip=section.get("r_skip", 1e-4),
            spd_policy=section.get("spd_policy", False),
            scaling_margin=section.get("scaling_margin"),
            sr1_acceptance=SR1Acceptance(section.get("sr1_acceptance", "aggregate")),
            rebuild_every=section.get("rebuild_every"),
            update_start_ratio=section.get("update_start_ratio"),
            precond=section.get("precond", "ic0"),
            pcg_max_iters=pcg_section.get("max_iters", 2000),
            shift_retries=precond_section.get("ic_shift_retries", 5),
            shift_start=precond_section.get("ic_shift_start", 1e-3),
            beta_iters=precond_section.get("beta_iters", 50),
        )


@dataclass(frozen=True)
class NewtonRecord:
    k: int
    residual_norm: float
    eta: float
    pcg_iters: int
    pcg_flag: PcgFlag
    decision: UpdateDecision


@dataclass
class NewtonTrace:
    records: List[NewtonRecord] = field(default_factory=list)
    converged: bool = False
    final_residual_norm: float = float("nan")
    wall_time: float = 0.0

    @property
    def nlit(self) -> int:
        return len(self.records)

    @property
    def totlin(self) -> int:
        return sum(record.pcg_iters for record in self.records)

    def residual_norms(self) -> np.ndarray:
        """Nonlinear residual norms ||F_0||, ..., ||F_final||."""
        return np.array([record.residual_norm for record in self.records] + [self.final_residual_norm])

    def summary(self) -> str:
        status = "converged" if self.converged else "not converged"
        return f"{status}: nlit={self.nlit} totlin={self.totlin} wall_time={self.wall_time:.3f}s"


@dataclass(frozen=True)
class NewtonStep:
    """
    What a step observer sees right after the window update of step k.

    preconditioner is the live operator of the run, not a snapshot: later
    steps keep mutating its window, so inspect it inside the callback.
    """

    k: int
    s: np.ndarray
    y: np.ndarray
    decision: UpdateDecision
    preconditioner: QuasiNewtonPreconditioner
    jacobian_next: SparseMatrix


def forcing_term(normF_k: float, normF_0: float, cfg: NewtonConfig) -> float:
    """
    Inner relative tolerance eta_k.

    :param normF_k: Current residual norm.
    :param normF_0: Initial residual norm.
    :param cfg: Configuration holding the forcing rule.
    """
    forcing = cfg.forcing
    if forcing.mode is ForcingMode.FIXED:
        return forcing.eta
    return min(forcing.eta_max, forcing.c * normF_k / normF_0)


def _decide(qn: QuasiNewtonPreconditioner, cfg: NewtonConfig, s: np.ndarray, y: np.ndarray,
            ratio: float) -> UpdateDecision:
    if cfg.update_kind is UpdateKind.NO_UPDATE:
        return UpdateDecision(False, UpdateReason.DISABLED, 0.0)
    if cfg.update_start_ratio is not None and ratio > cfg.update_start_ratio:
        return UpdateDecision(False, UpdateReason.DEFERRED, 0.0)
    decision = qn.push(s, y)
    if not decision.accepted and decision.reason is UpdateReason.SR1_DENOMINATOR_NEGATIVE_POLICY:
        logger.warning(f"Rejected update under SPD policy (denominator {decision.denominator_value:.3e})")
    return decision


def inexact_newton(
    problem: NonlinearProblem,
    x0: np.ndarray,
    cfg: Optional[NewtonConfig] = None,
    observer: Optional[Callable[[NewtonStep], None]] = None,
) -> tuple[np.ndarray, NewtonTrace]:
    """
    Run inexact Newton from x0.

    The base preconditioner is built once from J(x0), unless rebuild_every
    asks for periodic rebuilds (which also clear the window).

    :param problem: The nonlinear problem.
    :param x0: Initial guess.
    :param cfg: Solver configuration.
    :param observer: Called after every window update.
    :return: Tuple of (final iterate, trace).
    :raises SolverBreakdownError: If PCG breaks down; the trace is attached.
    :raises DivergenceError: If the residual stops being finite.
    """
    cfg = cfg or NewtonConfig()
    start = time.perf_counter()
    trace = NewtonTrace()
    x = np.array(x0, dtype=np.float64, copy=True)
    F = problem.residual(x)
    normF_0 = float(np.linalg.norm(F))
    normF = normF_0
    if not np.isfinite(normF_0):
        raise DivergenceError(f"non-finite initial residual for {problem.name}", trace=trace)

    J = problem.jacobian(x)
    base = build_base_preconditioner(J, cfg.precond, shift_retries=cfg.shift_retries, shift_start=cfg.shift_start,
                                     scaling_margin=cfg.scaling_margin, beta_iters=cfg.beta_iters)
    qn = QuasiNewtonPreconditioner(base, cfg.update_kind, cfg.kmax, r_skip=cfg.r_skip,
                                   spd_policy=cfg.spd_policy, acceptance=cfg.sr1_acceptance)
    logger.info(f"Newton on {problem.name} (n={problem.n}): P0={base.describe()}, update={cfg.update_kind.value}, "
                f"kmax={cfg.kmax}, ||F0||={normF_0:.3e}")

    for k in range(cfg.nl_max_iters):
        if normF <= cfg.nl_rel_tol * normF_0:
            break
        eta = forcing_term(normF, normF_0, cfg)
        outcome = pcg(J.__matmul__, -F, qn.apply, PcgConfig(rel_tol=eta, max_iters=cfg.pcg_max_iters))
        if outcome.flag.is_breakdown:
            trace.records.append(NewtonRecord(k, normF, eta, outcome.iters, outcome.flag,
                                              UpdateDecision(False, UpdateReason.DISABLED, 0.0)))
            trace.final_residual_norm = normF
            trace.wall_time = time.perf_counter() - start
            raise SolverBreakdownError(f"PCG {outcome.flag.value} at Newton iteration {k}", flag=outcome.flag,
                                       trace=trace)
        if outcome.flag is PcgFlag.MAX_ITERS:
            logger.warning(f"PCG hit {cfg.pcg_max_iters} iterations at Newton iteration {k} "
                           f"(relative residual {outcome.final_rel_residual:.3e})")

        s = outcome.x
        x_next = x + s
        try:
            F_next = problem.residual(x_next)
        except DivergenceError as e:
            e.trace = trace
            raise
        if not np.all(np.isfinite(F_next)):
            raise DivergenceError(f"non-finite residual at Newton iteration {k}", trace=trace)
        y = F_next - F
        decision = _decide(qn, cfg, s, y, normF / normF_0)
        trace.records.append(NewtonRecord(k, normF, eta, outcome.iters, outcome.flag, decision))

        x, F = x_next, F_next
        normF = float(np.linalg.norm(F))
        J = problem.jacobian(x)
        logger.info(f"it {k:3d}: ||F||={normF:.3e} eta={eta:.1e} pcg={outcome.iters:4d} update={decision.reason.value}")
        if observer is not None:
            observer(NewtonStep(k, s, y, decision, qn, J))
        if cfg.rebuild_every and (k + 1) % cfg.rebuild_every == 0:
            base = build_base_preconditioner(J, cfg.precond, shift_retries=cfg.shift_retries,
                                             shift_start=cfg.shift_start, scaling_margin=cfg.scaling_margin,
                                             beta_iters=cfg.beta_iters)
            qn.reset(base)
            logger.info(f"Rebuilt P0 from J(x_{k + 1}) and cleared the window")

    trace.converged = normF <= cfg.nl_rel_tol * normF_0
    trace.final_residual_norm = normF
    trace.wall_time = time.perf_counter() - start
    if not trace.converged:
        logger.warning(f"Newton stopped after {trace.nlit} iterations with ||F||/||F0|| = {normF / normF_0:.3e}")
    logger.info(f"Newton {trace.summary()}")
    return x, trace
