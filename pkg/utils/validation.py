"""
Validation utilities for run specifications.
"""

import os
from typing import Optional

from preconditioners.base import parse_precond_choice
from preconditioners.window import UpdateKind

PROBLEMS = ("bratu", "phi2", "mm", "eig")
NONLINEARITIES = ("exponential", "bratu", "cubic", "phi2", "linear")


def parse_update_token(token: str) -> tuple[UpdateKind, Optional[int]]:
    """
    Split an update token such as "lsr1:4" into kind and window size.

    :param token: "<kind>" or "<kind>:<kmax>".
    :return: Tuple of (kind, kmax or None).
    :raises ValueError: If the token is malformed.
    """
    name, _, kmax_text = token.strip().lower().partition(":")
    kind = UpdateKind(name)
    if not kmax_text:
        return kind, None
    kmax = int(kmax_text)
    if kmax < 1:
        raise ValueError(f"kmax must be at least 1, got {kmax}")
    return kind, kmax


def validate_update_token(token: str) -> tuple[bool, Optional[str]]:
    """
    Validate an update token.

    :param token: Token to validate
    :return: Tuple of (is_valid, error_message)
    """
    if not token:
        return False, "Update cannot be empty"
    try:
        parse_update_token(token)
    except ValueError:
        kinds = ", ".join(kind.value for kind in UpdateKind)
        return False, f"Update '{token}' must be one of {kinds}, optionally followed by ':<kmax>' with kmax >= 1"
    return True, None


def validate_precond_choice(choice: str) -> tuple[bool, Optional[str]]:
    if not choice:
        return False, "Preconditioner cannot be empty"
    try:
        parse_precond_choice(choice)
    except ValueError as e:
        return False, str(e)
    return True, None


def validate_problem(problem: str, m: Optional[int], matrix: Optional[str]) -> tuple[bool, Optional[str]]:
    """
    Validate the problem selection of a run.

    :param problem: One of bratu, phi2, mm, eig.
    :param m: Grid size for the built-in problems.
    :param matrix: Matrix Market path for mm (and optionally eig).
    :return: Tuple of (is_valid, error_message)
    """
    if problem not in PROBLEMS:
        return False, f"Problem must be one of {', '.join(PROBLEMS)}"
    if problem == "mm" or (problem == "eig" and matrix):
        if not matrix:
            return False, "Problem 'mm' needs --matrix"
        if not os.path.isfile(matrix):
            return False, f"Matrix file '{matrix}' not found"
        return True, None
    if m is None or m < 1:
        return False, f"Problem '{problem}' needs a grid size m >= 1"
    return True, None


def validate_positive(name: str, value, integer: bool = False) -> tuple[bool, Optional[str]]:
    if value is None:
        return True, None
    if integer and (not isinstance(value, int) or isinstance(value, bool)):
        return False, f"{name} must be an integer"
    if not isinstance(value, (int, float)) or isinstance(value, bool) or value <= 0:
        return False, f"{name} must be positive"
    return True, None


def validate_tolerance(name: str, value) -> tuple[bool, Optional[str]]:
    """
    Validate a relative tolerance, which must lie strictly between 0 and 1.

    :param name: Name used in the message
    :param value: Value to validate
    :return: Tuple of (is_valid, error_message)
    """
    if value is None:
        return True, None
    if not isinstance(value, (int, float)) or isinstance(value, bool) or not 0.0 < value < 1.0:
        return False, f"{name} must lie in (0, 1)"
    return True, None


def validate_nonlinearity(name: str) -> tuple[bool, Optional[str]]:
    if name is None or name.lower() in NONLINEARITIES:
        return True, None
    return False, f"Nonlinearity must be one of {', '.join(NONLINEARITIES)}"
