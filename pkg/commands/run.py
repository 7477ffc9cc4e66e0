"""
The run command: solve one problem and write its trace.

Also home of RunSpec and the run machinery the compare command reuses.
"""

import argparse
import logging
from dataclasses import asdict, dataclass, fields
from typing import Dict, Optional

import numpy as np

from commands import EXIT_BREAKDOWN, EXIT_CONFIG_ERROR, EXIT_NOT_CONVERGED, EXIT_OK
from database import TraceStore
from linalg.market import read_matrix_market
from linalg.sparse import SparseMatrix, laplacian_2d
from preconditioners.window import SR1Acceptance, UpdateKind
from services.eigensolver import EigenConfig, newton_grassmann
from services.newton import Forcing, NewtonConfig, inexact_newton
from services.problems import NonlinearProblem, Nonlinearity, bratu, initial_guess, load_mm_problem, phi2
from utils.config import default_output_dir, merge_run_overrides, read_json_file
from utils.exceptions import ConfigError, DivergenceError, MatrixMarketError, SolverBreakdownError
from utils.validation import (
    PROBLEMS,
    parse_update_token,
    validate_nonlinearity,
    validate_positive,
    validate_precond_choice,
    validate_problem,
    validate_tolerance,
    validate_update_token,
)

logger = logging.getLogger("qnprec.run")


@dataclass
class RunSpec:
    """
    Everything needed to reproduce one solver run.

    Values come from config.json's "run" section, then a user config file,
    then command-line flags; None means "use the solver section default".
    """

    problem: str = "bratu"
    m: Optional[int] = None
    lam: float = -1.0
    matrix: Optional[str] = None
    nonlinearity: Optional[str] = None
    precond: str = "ic0"
    update: str = "none"
    kmax: Optional[int] = None
    forcing: Optional[str] = None
    nl_rel_tol: Optional[float] = None
    nl_max_iters: Optional[int] = None
    inner_rel_tol: Optional[float] = None
    outer_tol: Optional[float] = None
    spd_policy: Optional[bool] = None
    scaling_margin: Optional[float] = None
    sr1_acceptance: Optional[str] = None
    rebuild_every: Optional[int] = None
    update_start_ratio: Optional[float] = None
    seed: int = 0
    output: Optional[str] = None
    name: Optional[str] = None

    @classmethod
    def from_mapping(cls, mapping: Dict) -> "RunSpec":
        """
        Build a spec from a flat mapping.

        :raises ConfigError: On unknown keys.
        """
        known = {spec_field.name for spec_field in fields(cls)}
        unknown = sorted(set(mapping) - known)
        if unknown:
            raise ConfigError(f"Unknown run settings: {', '.join(unknown)}")
        return cls(**{key: value for key, value in mapping.items() if value is not None})

    def validate(self) -> None:
        """
        :raises ConfigError: On the first invalid setting.
        """
        checks = [
            validate_problem(self.problem, self.m, self.matrix),
            validate_update_token(self.update),
            validate_precond_choice(self.precond),
            validate_positive("kmax", self.kmax, integer=True),
            validate_positive("nl_max_iters", self.nl_max_iters, integer=True),
            validate_positive("rebuild_every", self.rebuild_every, integer=True),
            validate_positive("update_start_ratio", self.update_start_ratio),
            validate_tolerance("nl_rel_tol", self.nl_rel_tol),
            validate_tolerance("inner_rel_tol", self.inner_rel_tol),
            validate_tolerance("outer_tol", self.outer_tol),
            validate_nonlinearity(self.nonlinearity),
        ]
        for is_valid, message in checks:
            if not is_valid:
                raise ConfigError(message)
        if self.scaling_margin is not None and not self.scaling_margin > 1.0:
            raise ConfigError("scaling_margin must exceed 1")
        if self.sr1_acceptance is not None and self.sr1_acceptance not in {a.value for a in SR1Acceptance}:
            raise ConfigError("sr1_acceptance must be 'aggregate' or 'retained'")
        if self.forcing is not None:
            try:
                Forcing.parse(self.forcing)
            except ValueError as e:
                raise ConfigError(str(e))

    @property
    def update_kind(self) -> UpdateKind:
        return parse_update_token(self.update)[0]

    @property
    def window_size(self) -> Optional[int]:
        token_kmax = parse_update_token(self.update)[1]
        return token_kmax if token_kmax is not None else self.kmax

    def label(self) -> str:
        kind = self.update_kind
        if kind is UpdateKind.NO_UPDATE or self.window_size is None:
            return kind.value
        return f"{kind.value}:{self.window_size}"

    def problem_key(self) -> tuple:
        return self.problem, self.m, self.lam, self.matrix, self.nonlinearity

    def default_name(self) -> str:
        size = f"m{self.m}" if self.matrix is None else "mm"
        return f"{self.problem}-{size}-{self.precond}-{self.label()}".replace(":", "_")


@dataclass
class RunResult:
    label: str
    exit_code: int
    converged: bool
    nlit: int
    totlin: int
    wall_time: float
    trace_path: Optional[str] = None
    message: str = ""
    eigenvalue: Optional[float] = None
    warmup_lin: Optional[int] = None

    def summary(self) -> str:
        status = "converged" if self.converged else f"failed (exit {self.exit_code})"
        line = f"{self.label}: {status} nlit={self.nlit} totlin={self.totlin} wall_time={self.wall_time:.3f}s"
        if self.eigenvalue is not None:
            line += f" lambda={self.eigenvalue:.12g}"
        if self.message:
            line += f" ({self.message})"
        return line

    def to_row(self) -> Dict:
        return asdict(self)


def _with_overrides(section: Dict, overrides: Dict) -> Dict:
    merged = dict(section)
    merged.update({key: value for key, value in overrides.items() if value is not None})
    return merged


def newton_config(spec: RunSpec, config: Dict) -> NewtonConfig:
    section = _with_overrides(config.get("newton", {}), {
        "update": spec.update_kind.value,
        "kmax": spec.window_size,
        "precond": spec.precond,
        "forcing": spec.forcing,
        "nl_rel_tol": spec.nl_rel_tol,
        "nl_max_iters": spec.nl_max_iters,
        "spd_policy": spec.spd_policy,
        "scaling_margin": spec.scaling_margin,
        "sr1_acceptance": spec.sr1_acceptance,
        "rebuild_every": spec.rebuild_every,
        "update_start_ratio": spec.update_start_ratio,
    })
    return NewtonConfig.from_config(section, config.get("pcg", {}), config.get("precond", {}))


def eigen_config(spec: RunSpec, config: Dict) -> EigenConfig:
    section = _with_overrides(config.get("eigen", {}), {
        "update": spec.update_kind.value,
        "kmax": spec.window_size,
        "precond": spec.precond,
        "outer_tol_factor": spec.outer_tol,
        "inner_rel_tol": spec.inner_rel_tol,
        "spd_policy": spec.spd_policy,
        "scaling_margin": spec.scaling_margin,
        "sr1_acceptance": spec.sr1_acceptance,
    })
    return EigenConfig.from_config(section, config.get("precond", {}))


def build_problem(spec: RunSpec) -> NonlinearProblem:
    if spec.problem == "bratu":
        return bratu(spec.m, spec.lam)
    if spec.problem == "phi2":
        return phi2(spec.m, spec.lam)
    return load_mm_problem(spec.matrix, Nonlinearity.parse(spec.nonlinearity or "cubic"), spec.lam)


def eigen_matrix(spec: RunSpec) -> SparseMatrix:
    if spec.matrix:
        return read_matrix_market(spec.matrix)
    return laplacian_2d(spec.m)


def execute_run(spec: RunSpec, config: Dict, output_dir: Optional[str] = None) -> RunResult:
    """
    Run one spec and write its trace.

    Breakdowns and divergence are turned into exit codes; the partial trace
    is still written.

    :param spec: A validated run spec.
    :param config: The merged configuration.
    :param output_dir: Directory for the trace when the spec has none.
    :raises ConfigError: If an input file cannot be read.
    """
    store = TraceStore(directory=spec.output or output_dir or default_output_dir())
    name = spec.name or spec.default_name()
    eigen = spec.problem == "eig"
    write_trace = store.write_eigen_trace if eigen else store.write_newton_trace
    try:
        if eigen:
            A = eigen_matrix(spec)
            u0 = np.random.default_rng(spec.seed).standard_normal(A.n)
            theta, _, trace = newton_grassmann(A, u0, eigen_config(spec, config))
        else:
            problem = build_problem(spec)
            _, trace = inexact_newton(problem, initial_guess(problem.n), newton_config(spec, config))
    except MatrixMarketError as e:
        raise ConfigError(f"Cannot read matrix: {e}")
    except (SolverBreakdownError, DivergenceError) as e:
        code = EXIT_BREAKDOWN if isinstance(e, SolverBreakdownError) else EXIT_NOT_CONVERGED
        logger.error(f"{spec.label()}: {e}")
        trace = e.trace
        path = write_trace(name, trace) if trace is not None else None
        nlit = trace.nlit if trace is not None else 0
        totlin = trace.totlin if trace is not None else 0
        wall_time = trace.wall_time if trace is not None else 0.0
        return RunResult(spec.label(), code, False, nlit, totlin, wall_time, path, str(e))

    path = write_trace(name, trace)
    code = EXIT_OK if trace.converged else EXIT_NOT_CONVERGED
    result = RunResult(spec.label(), code, trace.converged, trace.nlit, trace.totlin, trace.wall_time, path)
    if eigen:
        result.eigenvalue = theta
        result.warmup_lin = trace.warmup_lin
    return result


def add_spec_arguments(parser: argparse.ArgumentParser) -> None:
    """Flags shared by run and compare; every default is None so files win unless a flag is given."""
    parser.add_argument("problem", choices=PROBLEMS, help="Problem to solve")
    parser.add_argument("--config", dest="config_file", help="JSON file with run settings")
    parser.add_argument("--m", "--laplacian", dest="m", type=int, help="Grid size (n = m^2)")
    parser.add_argument("--lam", type=float, help="Nonlinearity parameter lambda")
    parser.add_argument("--matrix", help="Matrix Market file for mm and eig")
    parser.add_argument("--nonlinearity", help="exponential, cubic or linear (mm problems)")
    parser.add_argument("--precond", help="identity, jacobi, ic0 or ict:<tau>")
    parser.add_argument("--kmax", type=int, help="Window capacity")
    parser.add_argument("--forcing", help="fixed:<eta> or proportional:<c>:<eta_max>")
    parser.add_argument("--nl-rel-tol", dest="nl_rel_tol", type=float)
    parser.add_argument("--nl-max-iters", dest="nl_max_iters", type=int)
    parser.add_argument("--inner-rel-tol", dest="inner_rel_tol", type=float)
    parser.add_argument("--outer-tol", dest="outer_tol", type=float, help="Eigen residual factor")
    parser.add_argument("--spd-policy", dest="spd_policy", action=argparse.BooleanOptionalAction, default=None)
    parser.add_argument("--scaling-margin", dest="scaling_margin", type=float)
    parser.add_argument("--sr1-acceptance", dest="sr1_acceptance", choices=[a.value for a in SR1Acceptance])
    parser.add_argument("--rebuild-every", dest="rebuild_every", type=int)
    parser.add_argument("--update-start-ratio", dest="update_start_ratio", type=float)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--output", help="Output directory")
    parser.add_argument("--name", help="Base name of the output files")


def spec_from_args(args: argparse.Namespace, config: Dict) -> RunSpec:
    """
    Merge config.json, the optional user file and flags into a validated spec.

    :raises ConfigError: On unknown keys or invalid values.
    """
    merged = config
    config_file = getattr(args, "config_file", None)
    if config_file:
        merged = merge_run_overrides(merged, read_json_file(config_file))
    flags = {spec_field.name: getattr(args, spec_field.name, None) for spec_field in fields(RunSpec)}
    merged = merge_run_overrides(merged, flags)
    spec = RunSpec.from_mapping(merged.get("run", {}))
    spec.validate()
    return spec


class Run:
    name = "run"
    description = "Solve one problem and write its trace"

    def __init__(self, app) -> None:
        self.app = app

    def add_arguments(self, parser: argparse.ArgumentParser) -> None:
        add_spec_arguments(parser)
        parser.add_argument("--update", help="none, lbfgs-twoloop, lbfgs or lsr1, optionally ':<kmax>'")

    def execute(self, args: argparse.Namespace) -> int:
        """
        Run the spec given on the command line.

        :param args: Parsed arguments.
        :return: The exit code.
        """
        try:
            spec = spec_from_args(args, self.app.config)
            result = execute_run(spec, self.app.config)
        except ConfigError as e:
            self.app.logger.error(str(e))
            return EXIT_CONFIG_ERROR
        print(result.summary())
        if result.trace_path:
            self.app.logger.info(f"Trace written to {result.trace_path}")
        return result.exit_code


def setup(app) -> None:
    app.add_command(Run(app))
