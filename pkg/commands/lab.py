"""
The lab command: spectral checks of incomplete Cholesky and SR1-updated
preconditioners.
"""

import argparse
import logging

from commands import EXIT_CONFIG_ERROR, EXIT_NOT_CONVERGED, EXIT_OK
from database import TraceStore
from services.spectral_lab import ic_spectrum_table, interlacing_sweep
from utils.config import default_output_dir
from utils.exceptions import DenseLimitError

logger = logging.getLogger("qnprec.lab")


def _drop_tol(token: str):
    if token.lower() in ("ic0", "none"):
        return None
    value = float(token)
    if value <= 0:
        raise argparse.ArgumentTypeError(f"drop tolerance must be positive, got {token}")
    return value


class Lab:
    name = "lab"
    description = "Spectral checks of the preconditioners"

    def __init__(self, app) -> None:
        self.app = app
        self.section = app.config.get("lab", {})

    def add_arguments(self, parser: argparse.ArgumentParser) -> None:
        checks = parser.add_subparsers(dest="check", required=True)
        spectrum = checks.add_parser("ic-spectrum", help="Extremal eigenvalues of the IC-preconditioned Laplacian")
        spectrum.add_argument("--m", type=int, default=198)
        spectrum.add_argument("--drop-tols", nargs="+", type=_drop_tol, default=[None, 1e-3, 1e-5],
                              help="ic0 or ICT drop tolerances")
        spectrum.add_argument("--mode", choices=["dense", "lanczos"], default="lanczos")
        interlacing = checks.add_parser("interlacing", help="Interlacing under one SR1 update")
        interlacing.add_argument("--n", type=int, default=50)
        interlacing.add_argument("--count", type=int, default=50)
        interlacing.add_argument("--seed", type=int, default=0)
        for sub in (spectrum, interlacing):
            sub.add_argument("--output", help="Output directory")
            sub.add_argument("--name", help="Base name of the report file")

    def execute(self, args: argparse.Namespace) -> int:
        store = TraceStore(directory=args.output or default_output_dir())
        if args.check == "ic-spectrum":
            try:
                rows = ic_spectrum_table(args.m, args.drop_tols, mode=args.mode,
                                         lanczos_iters=self.section.get("lanczos_iters", 250),
                                         dense_limit=self.section.get("dense_limit", 2000))
            except DenseLimitError as e:
                self.app.logger.error(str(e))
                return EXIT_CONFIG_ERROR
            path = store.write_report(args.name or f"ic-spectrum-m{args.m}", [row.to_dict() for row in rows])
            for row in rows:
                print(f"{row.label:>12}  alpha={row.lambda_min:.4e}  beta={row.lambda_max:.4f}")
            self.app.logger.info(f"Report written to {path}")
            return EXIT_OK

        reports = interlacing_sweep(args.n, args.count, args.seed)
        path = store.write_report(args.name or f"interlacing-n{args.n}", [report.to_dict() for report in reports])
        checked = [report for report in reports if not report.skipped]
        failed = [report for report in checked if not report.holds]
        print(f"interlacing: {len(checked)} checked, {len(reports) - len(checked)} skipped, {len(failed)} violations")
        self.app.logger.info(f"Report written to {path}")
        return EXIT_OK if not failed else EXIT_NOT_CONVERGED


def setup(app) -> None:
    app.add_command(Lab(app))
