"""
Initial preconditioners and their limited-memory quasi-Newton updates.
"""

from preconditioners.base import BasePreconditioner, build_base_preconditioner, ic_factor
from preconditioners.quasi_newton import QuasiNewtonPreconditioner, push_pair
from preconditioners.window import QNWindow, UpdateDecision, UpdateKind, UpdateReason

__all__ = [
    "BasePreconditioner",
    "QNWindow",
    "QuasiNewtonPreconditioner",
    "UpdateDecision",
    "UpdateKind",
    "UpdateReason",
    "build_base_preconditioner",
    "ic_factor",
    "push_pair",
]
