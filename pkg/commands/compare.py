"""
The compare command: run one problem under several update settings and
write a comparison table.
"""

import argparse
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from typing import Dict, List, Optional, Sequence

from commands import EXIT_CONFIG_ERROR, EXIT_NOT_CONVERGED, EXIT_OK
from commands.run import RunResult, RunSpec, add_spec_arguments, execute_run, spec_from_args
from database import TraceStore
from utils.config import default_output_dir
from utils.exceptions import ConfigError
from utils.validation import validate_update_token

logger = logging.getLogger("qnprec.compare")

DEFAULT_UPDATES = ("none", "lbfgs:1", "lbfgs:2", "lbfgs:3", "lbfgs:4", "lsr1:1", "lsr1:2", "lsr1:3", "lsr1:4")
TABLE_COLUMNS = ["label", "precond", "kmax", "nlit", "totlin", "wall_time", "exit_code"]


def specs_for_updates(base: RunSpec, updates: Sequence[str]) -> List[RunSpec]:
    """
    One spec per update token, each with its own trace name.

    :raises ConfigError: On an invalid token.
    """
    specs = []
    for token in updates:
        is_valid, message = validate_update_token(token)
        if not is_valid:
            raise ConfigError(message)
        spec = replace(base, update=token, name=None)
        spec = replace(spec, name=f"{base.name}-{spec.label()}".replace(":", "_") if base.name else None)
        specs.append(spec)
    return specs


def compare_specs(specs: Sequence[RunSpec], config: Dict, output_dir: Optional[str] = None,
                  jobs: int = 1) -> List[RunResult]:
    """
    Run every spec over the same problem.

    :param specs: At least two specs sharing one problem.
    :param config: Merged configuration.
    :param output_dir: Trace directory.
    :param jobs: Worker processes; 1 runs sequentially.
    :return: Results in spec order.
    :raises ConfigError: With fewer than two specs or mismatched problems.
    """
    if len(specs) < 2:
        raise ConfigError("compare needs at least two run specifications")
    keys = {spec.problem_key() for spec in specs}
    if len(keys) != 1:
        raise ConfigError("compare needs every specification to solve the same problem")
    output_dir = output_dir or default_output_dir()
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as executor:
            futures = [executor.submit(execute_run, spec, config, output_dir) for spec in specs]
            return [future.result() for future in futures]
    return [execute_run(spec, config, output_dir) for spec in specs]


def table_rows(specs: Sequence[RunSpec], results: Sequence[RunResult]) -> List[Dict]:
    return [
        {
            "label": result.label,
            "precond": spec.precond,
            "kmax": spec.window_size if spec.window_size is not None else "",
            "nlit": result.nlit,
            "totlin": result.totlin,
            "wall_time": round(result.wall_time, 3),
            "exit_code": result.exit_code,
        }
        for spec, result in zip(specs, results)
    ]


class Compare:
    name = "compare"
    description = "Compare update strategies on one problem"

    def __init__(self, app) -> None:
        self.app = app

    def add_arguments(self, parser: argparse.ArgumentParser) -> None:
        add_spec_arguments(parser)
        parser.add_argument("--updates", nargs="+", default=list(DEFAULT_UPDATES),
                            help="Update tokens, e.g. none lbfgs:4 lsr1:4")
        parser.add_argument("--jobs", type=int, default=1, help="Worker processes")
        parser.add_argument("--table", default="compare", help="Base name of the table files")

    def execute(self, args: argparse.Namespace) -> int:
        try:
            base = spec_from_args(args, self.app.config)
            specs = specs_for_updates(base, args.updates)
            output_dir = base.output or default_output_dir()
            results = compare_specs(specs, self.app.config, output_dir, jobs=max(1, args.jobs))
        except ConfigError as e:
            self.app.logger.error(str(e))
            return EXIT_CONFIG_ERROR

        store = TraceStore(directory=output_dir)
        csv_path, text_path = store.write_table(args.table, TABLE_COLUMNS, table_rows(specs, results))
        for result in results:
            print(result.summary())
        self.app.logger.info(f"Comparison table written to {csv_path} and {text_path}")
        return EXIT_OK if all(result.exit_code == EXIT_OK for result in results) else EXIT_NOT_CONVERGED


def setup(app) -> None:
    app.add_command(Compare(app))
