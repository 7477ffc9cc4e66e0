"""
Exception hierarchy for qnprec.

Every error raised on purpose by the library derives from QNPrecError so that
the command layer can map failures onto exit codes.
"""

from typing import Optional


class QNPrecError(Exception):
    """Base class for all library errors."""


class DimensionMismatchError(QNPrecError, ValueError):
    def __init__(self, expected: int, got: int, what: str = "vector") -> None:
        self.expected = expected
        self.got = got
        super().__init__(f"{what} has length {got}, expected {expected}")


class MatrixMarketError(QNPrecError):
    """
    Raised when a Matrix Market file cannot be parsed.

    :param message: What went wrong.
    :param line: One-based line number of the offending line, if known.
    :param token: The offending token, if known.
    """

    def __init__(self, message: str, line: Optional[int] = None, token: Optional[str] = None) -> None:
        self.line = line
        self.token = token
        location = f"line {line}: " if line is not None else ""
        offending = f" (offending token '{token}')" if token is not None else ""
        super().__init__(f"{location}{message}{offending}")


class FactorizationBreakdownError(QNPrecError):
    def __init__(self, column: int, pivot: float) -> None:
        self.column = column
        self.pivot = pivot
        super().__init__(f"Incomplete Cholesky breakdown at column {column} (pivot {pivot:.3e})")


class PreconditionerError(QNPrecError):
    """Raised when a preconditioner cannot be built or applied."""


class DenseLimitError(QNPrecError):
    def __init__(self, n: int, limit: int) -> None:
        self.n = n
        self.limit = limit
        super().__init__(f"Dense path refused: n = {n} exceeds the limit {limit}")


class DivergenceError(QNPrecError):
    """Raised when a nonlinear residual stops being finite."""

    def __init__(self, message: str, trace=None) -> None:
        self.trace = trace
        super().__init__(message)


class SolverBreakdownError(QNPrecError):
    """
    Raised when PCG breaks down inside an outer solver.

    :param message: Description of the breakdown.
    :param flag: The PCG termination flag.
    :param trace: The outer-iteration trace gathered up to the breakdown.
    """

    def __init__(self, message: str, flag=None, trace=None) -> None:
        self.flag = flag
        self.trace = trace
        super().__init__(message)


class ConfigError(QNPrecError):
    """Raised for invalid run specifications and configuration files."""
