"""
Dense vector kernels with dimension checking.
"""

import numpy as np

from utils.exceptions import DimensionMismatchError


def _as_vector(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def _check_same_length(x: np.ndarray, y: np.ndarray) -> None:
    if x.shape != y.shape:
        raise DimensionMismatchError(x.shape[0], y.shape[0])


def dot(x, y) -> float:
    x, y = _as_vector(x), _as_vector(y)
    _check_same_length(x, y)
    return float(np.dot(x, y))


def axpy(a: float, x, y) -> np.ndarray:
    """Return a*x + y as a new vector."""
    x, y = _as_vector(x), _as_vector(y)
    _check_same_length(x, y)
    return a * x + y


def norm2(x) -> float:
    return float(np.linalg.norm(_as_vector(x)))


def scale(a: float, x) -> np.ndarray:
    return a * _as_vector(x)


def all_finite(x) -> bool:
    return bool(np.all(np.isfinite(x)))
