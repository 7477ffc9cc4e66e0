import numpy as np
import pytest

from preconditioners.base import OperatorPreconditioner


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def dense_base():
    """Factory turning a dense SPD matrix into a base preconditioner."""

    def make(P: np.ndarray) -> OperatorPreconditioner:
        P = np.asarray(P, dtype=np.float64)
        return OperatorPreconditioner(P.shape[0], lambda r: P @ r, label="dense")

    return make
