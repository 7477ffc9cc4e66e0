import numpy as np
import pytest

from linalg.sparse import diagonal_matrix, laplacian_2d
from preconditioners.window import UpdateKind, UpdateReason
from services.krylov import PcgFlag
from services.newton import Forcing, ForcingMode, NewtonConfig, forcing_term, inexact_newton
from services.problems import NonlinearProblem, Nonlinearity, bratu, initial_guess, linear_problem, phi2
from services.spectral_lab import secant_step_residual
from utils.exceptions import DivergenceError, SolverBreakdownError


SAFE_SR1 = {"update_kind": "lsr1", "spd_policy": True, "scaling_margin": 1.1}


def run(problem, **overrides):
    return inexact_newton(problem, initial_guess(problem.n), NewtonConfig(**overrides))


def test_fixed_forcing():
    cfg = NewtonConfig(forcing=Forcing(ForcingMode.FIXED, eta=1e-6))
    assert forcing_term(5.0, 10.0, cfg) == 1e-6
    assert forcing_term(1e-9, 10.0, cfg) == 1e-6


def test_proportional_forcing():
    cfg = NewtonConfig(forcing=Forcing(ForcingMode.RESIDUAL_PROPORTIONAL, c=1.0, eta_max=0.1))
    assert forcing_term(2.0, 2.0, cfg) == pytest.approx(0.1)
    assert forcing_term(2e-3, 2.0, cfg) == pytest.approx(1e-3)


@pytest.mark.parametrize(
    "text, expected",
    [("fixed:1e-6", Forcing(ForcingMode.FIXED, eta=1e-6)),
     ("proportional:1:0.1", Forcing(ForcingMode.RESIDUAL_PROPORTIONAL, c=1.0, eta_max=0.1)),
     ("residual_proportional:2:0.5", Forcing(ForcingMode.RESIDUAL_PROPORTIONAL, c=2.0, eta_max=0.5))],
)
def test_forcing_parse(text, expected):
    assert Forcing.parse(text) == expected
    assert Forcing.parse(expected.describe()) == expected


@pytest.mark.parametrize("text", ["fixed", "fixed:2", "fixed:abc", "proportional:1", "proportional:0:0.1", "eisenstat"])
def test_forcing_parse_rejects(text):
    with pytest.raises(ValueError):
        Forcing.parse(text)


def test_config_coerces_strings():
    cfg = NewtonConfig(update_kind="lsr1", forcing="fixed:1e-4", sr1_acceptance="retained")
    assert cfg.update_kind is UpdateKind.LSR1_COMPACT
    assert cfg.forcing.eta == 1e-4


@pytest.mark.parametrize("overrides", [{"nl_rel_tol": 0.0}, {"kmax": 0}, {"update_kind": "bfgs"}])
def test_config_validation(overrides):
    with pytest.raises(ValueError):
        NewtonConfig(**overrides)


def test_config_from_sections():
    cfg = NewtonConfig.from_config({"update": "lbfgs", "kmax": 2, "forcing": "fixed:1e-3"},
                                   {"max_iters": 77}, {"ic_shift_retries": 2})
    assert cfg.update_kind is UpdateKind.LBFGS_COMPACT
    assert cfg.kmax == 2
    assert cfg.pcg_max_iters == 77
    assert cfg.shift_retries == 2


def test_scalar_phi2_converges_fast():
    problem = NonlinearProblem(diagonal_matrix([4.0]), Nonlinearity.CUBIC, lam=-1.0)
    x, trace = run(problem)
    assert trace.converged
    assert abs(x[0]) < 1e-10
    norms = trace.residual_norms()
    for before, after in zip(norms, norms[1:]):
        if after > 0.0:
            assert after / before ** 2 <= 1.0


def test_linear_problem_needs_one_step():
    A = laplacian_2d(4)
    problem = linear_problem(A, np.ones(A.n))
    x, trace = inexact_newton(problem, np.zeros(A.n), NewtonConfig(forcing="fixed:1e-12"))
    assert trace.converged
    assert trace.nlit == 1
    assert np.allclose(A @ x, np.ones(A.n), atol=1e-9)


def test_root_as_initial_guess():
    problem = phi2(3)
    x, trace = inexact_newton(problem, np.zeros(problem.n))
    assert trace.converged
    assert trace.nlit == 0


@pytest.mark.parametrize("make", [bratu, phi2])
@pytest.mark.parametrize(
    "update", [{"update_kind": "none"}, {"update_kind": "lbfgs"}, {"update_kind": "lbfgs-twoloop"}, SAFE_SR1]
)
def test_small_grids_converge(make, update):
    problem = make(8)
    x, trace = run(problem, kmax=3, **update)
    assert trace.converged
    assert trace.totlin == sum(record.pcg_iters for record in trace.records)
    assert np.linalg.norm(problem.residual(x)) <= 1e-10 * trace.residual_norms()[0]
    assert all(record.pcg_flag is PcgFlag.CONVERGED for record in trace.records)


def test_no_update_records_disabled():
    _, trace = run(bratu(6))
    assert {record.decision.reason for record in trace.records} == {UpdateReason.DISABLED}


def test_update_start_ratio_defers_updates():
    _, trace = run(bratu(6), update_start_ratio=1e-12, **SAFE_SR1)
    assert {record.decision.reason for record in trace.records} == {UpdateReason.DEFERRED}


def test_lsr1_accepts_updates():
    _, trace = run(bratu(8), **SAFE_SR1)
    assert any(record.decision.accepted for record in trace.records)


def test_runs_are_deterministic():
    _, first = run(phi2(8), kmax=2, **SAFE_SR1)
    _, second = run(phi2(8), kmax=2, **SAFE_SR1)
    assert np.array_equal(first.residual_norms(), second.residual_norms())
    assert [r.pcg_iters for r in first.records] == [r.pcg_iters for r in second.records]


def test_secant_holds_after_accepted_update():
    residuals = []

    def observe(step):
        if step.decision.accepted:
            gap = np.linalg.norm(step.preconditioner.apply(step.y) - step.s)
            residuals.append(gap / np.linalg.norm(step.s))

    inexact_newton(bratu(6), initial_guess(36), NewtonConfig(**SAFE_SR1), observer=observe)
    assert residuals
    assert max(residuals) <= 1e-10


def test_lbfgs_preconditioner_stays_positive_definite():
    smallest = []

    def observe(step):
        smallest.append(np.linalg.eigvalsh(step.preconditioner.materialize())[0])

    inexact_newton(phi2(6), initial_guess(36), NewtonConfig(update_kind="lbfgs", kmax=4), observer=observe)
    assert smallest
    assert min(smallest) > 0.0


def test_secant_step_residual_on_linear_problem():
    A = laplacian_2d(6)
    residuals = []

    def observe(step):
        if step.decision.accepted:
            residuals.append(secant_step_residual(step.preconditioner.apply, step.jacobian_next, step.s))

    _, trace = inexact_newton(linear_problem(A, np.ones(A.n)), np.zeros(A.n),
                              NewtonConfig(forcing="fixed:1e-2", kmax=4, **SAFE_SR1), observer=observe)
    assert trace.converged
    assert residuals
    assert max(residuals) <= 1e-10


def test_rebuild_clears_window():
    sizes = []
    _, trace = inexact_newton(bratu(6), initial_guess(36), NewtonConfig(update_kind="lbfgs", rebuild_every=1),
                              observer=lambda step: sizes.append(step.preconditioner.window.m))
    assert trace.converged
    assert max(sizes) <= 1


def test_breakdown_carries_trace():
    problem = linear_problem(diagonal_matrix([1.0, -1.0]), np.array([1.0, 1.0]))
    with pytest.raises(SolverBreakdownError) as excinfo:
        inexact_newton(problem, np.zeros(2), NewtonConfig(precond="identity"))
    assert excinfo.value.flag is PcgFlag.BREAKDOWN_PAP
    assert excinfo.value.trace.nlit == 1
    assert excinfo.value.trace.records[0].pcg_flag is PcgFlag.BREAKDOWN_PAP


def test_overflowing_start_diverges():
    with pytest.raises(DivergenceError):
        inexact_newton(bratu(2), np.full(4, 1e4))


@pytest.mark.slow
@pytest.mark.parametrize("make", [bratu, phi2])
def test_updates_reduce_linear_work_on_large_grid(make):
    problem = make(99)
    _, plain = run(problem, precond="ict:0.01", forcing="fixed:1e-6")
    _, lbfgs = run(problem, precond="ict:0.01", forcing="fixed:1e-6", update_kind="lbfgs", kmax=4)
    _, lsr1 = run(problem, precond="ict:0.01", forcing="fixed:1e-6", update_kind="lsr1", kmax=4)
    assert plain.converged and lbfgs.converged and lsr1.converged
    assert lbfgs.totlin < plain.totlin
    assert lsr1.totlin < plain.totlin
    assert lsr1.totlin <= 1.05 * lbfgs.totlin


@pytest.mark.slow
def test_scaled_lsr1_stays_positive_definite_on_phi2():
    problem = phi2(31)
    smallest, secant = [], []

    def observe(step):
        smallest.append(np.linalg.eigvalsh(step.preconditioner.materialize(limit=problem.n))[0])
        if step.decision.accepted:
            secant.append(secant_step_residual(step.preconditioner.apply, step.jacobian_next, step.s))

    _, trace = inexact_newton(problem, initial_guess(problem.n), NewtonConfig(kmax=4, **SAFE_SR1), observer=observe)
    assert trace.converged
    assert min(smallest) > 0.0
    assert len(secant) >= 2
    assert secant[-1] < secant[0]


@pytest.mark.slow
def test_phi2_converges_quadratically():
    _, trace = run(phi2(31), forcing="proportional:1:0.1")
    assert trace.converged
    assert trace.nlit <= 25
    norms = trace.residual_norms()
    ratios = [after / before ** 2 for before, after in zip(norms[:-1], norms[1:]) if after > 0.0]
    assert max(ratios[-3:]) <= 1e3
