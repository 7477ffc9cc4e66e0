"""
Desk-scale spectral checks of updated preconditioners.

Spectra of J^{1/2} P J^{1/2} (similar to P J) by dense eigendecomposition
or by Lanczos in the J-inner product, the secant residual of an updated
preconditioner against the next Jacobian, and interlacing of the spectrum
under one SR1 update with a constant Jacobian.
"""

import logging
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
import scipy.linalg as sla

from linalg.sparse import SparseMatrix, laplacian_2d, random_spd, spmv
from preconditioners.base import IncompleteCholeskyPreconditioner, OperatorPreconditioner, ic_factor
from preconditioners.quasi_newton import QuasiNewtonPreconditioner
from preconditioners.window import UpdateKind
from services.krylov import Operator
from utils.exceptions import DenseLimitError

logger = logging.getLogger("qnprec.spectral_lab")

# Extremal eigenvalues of the IC-preconditioned 198 x 198 grid Laplacian.
IC_LAPLACIAN_REFERENCE = {
    None: (8.504e-4, 1.2057),
    1e-3: (2.253e-2, 1.1445),
    1e-5: (0.5097, 1.0998),
}


@dataclass
class SpectrumReport:
    lambda_min: float
    lambda_max: float
    full_spectrum: Optional[np.ndarray] = None
    method: str = "dense"

    @property
    def condition_number(self) -> float:
        return self.lambda_max / self.lambda_min


@dataclass
class InterlacingReport:
    skipped: bool
    holds: bool = False
    interlacing_violation: float = 0.0
    top_bound_violation: float = 0.0
    condition_bound_violation: float = 0.0
    z_norm_sq: float = 0.0
    denominator: float = 0.0
    kappa_before: float = float("nan")
    kappa_after: float = float("nan")
    reason: str = ""

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass
class SpectrumTableRow:
    label: str
    drop_tol: Optional[float]
    lambda_min: float
    lambda_max: float
    reference: Optional[tuple] = field(default=None)

    def to_dict(self) -> Dict:
        return {"label": self.label, "drop_tol": self.drop_tol, "lambda_min": self.lambda_min,
                "lambda_max": self.lambda_max,
                "reference_min": self.reference[0] if self.reference else None,
                "reference_max": self.reference[1] if self.reference else None}


def dense_operator(P: Operator, n: int) -> np.ndarray:
    """Materialize a linear operator column by column."""
    identity = np.eye(n)
    return np.column_stack([P(identity[:, j]) for j in range(n)])


def spd_sqrt(J: np.ndarray) -> np.ndarray:
    """Symmetric square root of a dense SPD matrix."""
    eigenvalues, vectors = sla.eigh(J)
    return (vectors * np.sqrt(np.clip(eigenvalues, 0.0, None))) @ vectors.T


def symmetrized_operator(J: np.ndarray, P: np.ndarray, J_sqrt: Optional[np.ndarray] = None) -> np.ndarray:
    """Return J^{1/2} P J^{1/2}, symmetrized."""
    if J_sqrt is None:
        J_sqrt = spd_sqrt(J)
    M = J_sqrt @ P @ J_sqrt
    return 0.5 * (M + M.T)


def lanczos_extremes(A: SparseMatrix, P: Operator, iters: int = 250, seed: int = 0, tol: float = 1e-12) -> SpectrumReport:
    """
    Extremal eigenvalues of P A by Lanczos in the A-inner product.

    P A is self-adjoint for <x, y>_A = x^T A y; full reorthogonalization
    keeps the basis A-orthonormal.
    """
    n = A.n
    steps = min(iters, n)
    Q = np.zeros((n, steps + 1))
    AQ = np.zeros((n, steps + 1))
    alphas, betas = [], []
    q = np.random.default_rng(seed).standard_normal(n)
    Aq = spmv(A, q)
    norm = np.sqrt(q @ Aq)
    Q[:, 0], AQ[:, 0] = q / norm, Aq / norm
    for j in range(steps):
        w = P(AQ[:, j])
        alphas.append(float(w @ AQ[:, j]))
        for _ in range(2):
            w -= Q[:, : j + 1] @ (AQ[:, : j + 1].T @ w)
        Aw = spmv(A, w)
        beta = float(np.sqrt(max(w @ Aw, 0.0)))
        if j == steps - 1 or beta <= tol * abs(alphas[-1]):
            break
        betas.append(beta)
        Q[:, j + 1], AQ[:, j + 1] = w / beta, Aw / beta
    ritz = sla.eigvalsh_tridiagonal(np.array(alphas), np.array(betas[: len(alphas) - 1]))
    return SpectrumReport(float(ritz[0]), float(ritz[-1]), None, f"lanczos({len(alphas)})")


def preconditioned_spectrum(A: SparseMatrix, P: Operator, mode: str = "dense", dense_limit: int = 2000,
                            lanczos_iters: int = 250, seed: int = 0) -> SpectrumReport:
    """
    Spectrum of the preconditioned operator P A.

    :param A: SPD matrix.
    :param P: SPD preconditioner operator.
    :param mode: "dense" (full sorted spectrum) or "lanczos" (extremal estimates).
    :raises DenseLimitError: If the dense path is asked for n > dense_limit.
    """
    if mode == "lanczos":
        return lanczos_extremes(A, P, iters=lanczos_iters, seed=seed)
    if mode != "dense":
        raise ValueError(f"unknown spectrum mode '{mode}'")
    if A.n > dense_limit:
        raise DenseLimitError(A.n, dense_limit)
    spectrum = sla.eigvalsh(symmetrized_operator(A.to_dense(), dense_operator(P, A.n)))
    return SpectrumReport(float(spectrum[0]), float(spectrum[-1]), spectrum, "dense")


def secant_step_residual(P_next: Operator, J_next: SparseMatrix, s: np.ndarray) -> float:
    """
    Relative residual ||P_{k+1} J_{k+1} s - s|| / ||s|| of the latest step.
    """
    return float(np.linalg.norm(P_next(spmv(J_next, s)) - s) / np.linalg.norm(s))


def secant_eigen_residual(J: np.ndarray, P_after: np.ndarray, s: np.ndarray) -> float:
    """
    Residual of J^{1/2} P J^{1/2} v = v for v = J^{1/2} s, relative to ||v||.

    Exact for a secant pair of a constant Jacobian, y = J s.
    """
    J_sqrt = spd_sqrt(J)
    v = J_sqrt @ s
    return float(np.linalg.norm(symmetrized_operator(J, P_after, J_sqrt) @ v - v) / np.linalg.norm(v))


def interlacing_check(J: np.ndarray, P_before: np.ndarray, s: np.ndarray, y: np.ndarray,
                      slack: float = 1e-10, dense_limit: int = 500) -> InterlacingReport:
    """
    Check spectral interlacing under one SR1 update with the same Jacobian.

    The updated operator comes from the compact L-SR1 window with kmax = 1.
    With v = s - P y and z = J^{1/2} v / sqrt(y^T v), J^{1/2} P+ J^{1/2} is
    J^{1/2} P J^{1/2} plus the positive rank-one term z z^T, so
    lambda_k(before) <= lambda_k(after) <= lambda_{k+1}(before) and
    lambda_n(after) <= lambda_n(before) + ||z||^2. The condition number then
    satisfies kappa(after) <= (1 + ||z||^2 / lambda_n(before)) kappa(before).

    :param J: Dense SPD Jacobian.
    :param P_before: Dense SPD preconditioner.
    :param s: Step.
    :param y: Residual difference.
    :param slack: Absolute slack, scaled by lambda_n(before).
    """
    n = J.shape[0]
    if n > dense_limit:
        raise DenseLimitError(n, dense_limit)
    v = s - P_before @ y
    denominator = float(y @ v)
    if not denominator > 0.0:
        return InterlacingReport(skipped=True, denominator=denominator, reason="nonpositive SR1 denominator")
    P_after = single_sr1_operator(P_before, s, y)
    if P_after is None:
        return InterlacingReport(skipped=True, denominator=denominator, reason="SR1 pair rejected by the window")

    J_sqrt = spd_sqrt(J)
    before = sla.eigvalsh(symmetrized_operator(J, P_before, J_sqrt))
    after = sla.eigvalsh(symmetrized_operator(J, P_after, J_sqrt))
    z = J_sqrt @ v / np.sqrt(denominator)
    z_norm_sq = float(z @ z)
    tol = slack * max(1.0, before[-1])

    lower = np.max(before[:-1] - after[:-1], initial=0.0)
    upper = np.max(after[:-1] - before[1:], initial=0.0)
    interlacing_violation = max(0.0, float(lower), float(upper), float(before[-1] - after[-1]))
    top_bound_violation = max(0.0, float(after[-1] - before[-1] - z_norm_sq))
    kappa_before = before[-1] / before[0]
    kappa_after = after[-1] / after[0]
    kappa_bound = (1.0 + z_norm_sq / before[-1]) * kappa_before
    condition_bound_violation = max(0.0, float(kappa_after - kappa_bound))
    holds = (interlacing_violation <= tol and top_bound_violation <= tol
             and condition_bound_violation <= slack * max(1.0, kappa_bound))
    return InterlacingReport(
        skipped=False,
        holds=bool(holds),
        interlacing_violation=interlacing_violation,
        top_bound_violation=top_bound_violation,
        condition_bound_violation=condition_bound_violation,
        z_norm_sq=z_norm_sq,
        denominator=denominator,
        kappa_before=float(kappa_before),
        kappa_after=float(kappa_after),
    )


def interlacing_sweep(n: int = 50, count: int = 50, seed: int = 0, slack: float = 1e-10) -> List[InterlacingReport]:
    """
    Randomized commuting-case interlacing check.

    Each instance draws an SPD Jacobian J, an SPD preconditioner P and a
    step s, with y = J s (constant Jacobian).
    """
    rng = np.random.default_rng(seed)
    reports = []
    for _ in range(count):
        J = random_spd(n, rng, condition=100.0)
        P = random_spd(n, rng, condition=10.0)
        P /= 2.0 * np.linalg.norm(P, 2) * np.linalg.norm(J, 2)
        s = rng.standard_normal(n)
        reports.append(interlacing_check(J, P, s, J @ s, slack=slack))
    failed = sum(1 for report in reports if not report.skipped and not report.holds)
    logger.info(f"Interlacing sweep: {count} instances, {failed} violations")
    return reports


def ic_spectrum_table(m: int = 198, drop_tols: Sequence[Optional[float]] = (None, 1e-3, 1e-5), mode: str = "lanczos",
                      lanczos_iters: int = 250, dense_limit: int = 2000) -> List[SpectrumTableRow]:
    """
    Extremal eigenvalues of the IC-preconditioned m x m grid Laplacian.

    :param m: Grid size, n = m^2.
    :param drop_tols: None for IC(0), otherwise ICT drop tolerances.
    """
    A = laplacian_2d(m)
    rows = []
    for tau in drop_tols:
        label = "IC(0)" if tau is None else f"tau = {tau:g}"
        P = IncompleteCholeskyPreconditioner(ic_factor(A, drop_tol=tau), label=label)
        report = preconditioned_spectrum(A, P.apply, mode=mode, dense_limit=dense_limit, lanczos_iters=lanczos_iters)
        reference = IC_LAPLACIAN_REFERENCE.get(tau) if m == 198 else None
        rows.append(SpectrumTableRow(label, tau, report.lambda_min, report.lambda_max, reference))
        logger.info(f"{label}: alpha={report.lambda_min:.4e} beta={report.lambda_max:.4f} ({report.method})")
    return rows


def single_sr1_operator(P0_dense: np.ndarray, s: np.ndarray, y: np.ndarray) -> Optional[np.ndarray]:
    """
    Dense operator after pushing one SR1 pair through the compact window,
    or None if the pair is rejected.
    """
    n = P0_dense.shape[0]
    base = OperatorPreconditioner(n, lambda r: P0_dense @ r, label="dense")
    qn = QuasiNewtonPreconditioner(base, UpdateKind.LSR1_COMPACT, kmax=1)
    if not qn.push(s, y).accepted:
        return None
    return qn.materialize(limit=n)
