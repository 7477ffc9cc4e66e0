import numpy as np
import pytest
import scipy.sparse as sps

from linalg.sparse import SparseMatrix, diagonal_matrix, laplacian_2d
from preconditioners.base import (
    IdentityPreconditioner,
    IncompleteCholeskyPreconditioner,
    JacobiPreconditioner,
    TriangularFactor,
    apply_base,
    build_base_preconditioner,
    estimate_beta,
    ic_factor,
    parse_precond_choice,
    scale_for_spd,
)
from utils.exceptions import DimensionMismatchError, FactorizationBreakdownError, PreconditionerError


def test_ic_diagonal_is_exact():
    factor = ic_factor(diagonal_matrix([4.0, 9.0]))
    assert np.array_equal(factor.L.toarray(), np.diag([2.0, 3.0]))


def test_ic_two_by_two_is_full_cholesky():
    A = SparseMatrix.from_any(np.array([[4.0, -1.0], [-1.0, 4.0]]))
    L = ic_factor(A).L.toarray()
    assert np.allclose(L, [[2.0, 0.0], [-0.5, np.sqrt(3.75)]], atol=1e-15)


def test_ic0_keeps_pattern_of_lower_triangle():
    A = laplacian_2d(6)
    L = ic_factor(A).L
    pattern = A.lower().copy()
    pattern.data[:] = 1.0
    ours = L.copy()
    ours.data[:] = 1.0
    assert (pattern - ours).count_nonzero() == 0


@pytest.mark.parametrize("m", [4, 5])
def test_ic0_is_incomplete_on_small_grids(m):
    A = laplacian_2d(m)
    factor = ic_factor(A)
    L = factor.L.toarray()
    assert factor.source_nnz == (5 * m * m - 4 * m + m * m) // 2
    assert factor.L.nnz == factor.source_nnz
    assert np.linalg.norm(A.to_dense() - L @ L.T) > 1e-3 * np.linalg.norm(A.to_dense())


def test_ic0_reproduces_matrix_on_its_pattern():
    A = laplacian_2d(5)
    L = ic_factor(A).L.toarray()
    product = L @ L.T
    dense = A.to_dense()
    mask = dense != 0.0
    assert np.allclose(product[mask], dense[mask], atol=1e-12)


def test_ict_with_tiny_drop_tolerance_is_complete():
    A = laplacian_2d(4)
    factor = ic_factor(A, drop_tol=1e-14)
    L = factor.L.toarray()
    assert np.allclose(L @ L.T, A.to_dense(), atol=1e-10)
    assert factor.fill_ratio > ic_factor(A).fill_ratio


def test_ict_fill_grows_as_tolerance_shrinks():
    A = laplacian_2d(8)
    coarse = ic_factor(A, drop_tol=1e-2)
    fine = ic_factor(A, drop_tol=1e-4)
    assert fine.L.nnz >= coarse.L.nnz


def test_ic_breakdown_names_column():
    A = SparseMatrix.from_any(np.array([[1.0, 2.0], [2.0, 1.0]]))
    with pytest.raises(FactorizationBreakdownError) as excinfo:
        ic_factor(A)
    assert excinfo.value.column == 1
    assert excinfo.value.pivot == pytest.approx(-3.0)


def test_ic_rejects_nonpositive_drop_tolerance():
    with pytest.raises(ValueError):
        ic_factor(laplacian_2d(2), drop_tol=0.0)


def test_identity_apply():
    assert np.array_equal(IdentityPreconditioner(2).apply(np.array([1.0, 2.0])), [1.0, 2.0])


def test_jacobi_apply():
    P = JacobiPreconditioner(np.array([2.0, 4.0]))
    assert np.array_equal(P(np.array([2.0, 4.0])), [1.0, 1.0])


@pytest.mark.parametrize(
    "P0, expected",
    [(IdentityPreconditioner(2), [2.0, 4.0]), (JacobiPreconditioner(np.array([2.0, 4.0])), [1.0, 1.0])],
)
def test_apply_base(P0, expected):
    assert np.array_equal(apply_base(P0, np.array([2.0, 4.0])), expected)


def test_jacobi_rejects_zero_diagonal():
    with pytest.raises(PreconditionerError):
        JacobiPreconditioner(np.array([1.0, 0.0]))


def test_ic_apply_on_diagonal_matrix():
    P = IncompleteCholeskyPreconditioner(ic_factor(diagonal_matrix([4.0, 9.0])))
    assert np.allclose(P.apply(np.array([4.0, 9.0])), [1.0, 1.0], atol=1e-15)


def test_apply_checks_dimension():
    with pytest.raises(DimensionMismatchError):
        IdentityPreconditioner(3).apply(np.ones(2))


def test_scaled_factor_divides_by_sigma_squared():
    factor = replace_sigma(ic_factor(diagonal_matrix([4.0, 9.0])), 2.0)
    assert np.allclose(factor.solve(np.array([4.0, 9.0])), [0.25, 0.25])


def replace_sigma(factor: TriangularFactor, sigma: float) -> TriangularFactor:
    return TriangularFactor(L=factor.L, sigma=sigma, source_nnz=factor.source_nnz)


def test_estimate_beta_identity_on_diagonal():
    assert estimate_beta(diagonal_matrix([1.0, 2.0]), IdentityPreconditioner(2)) == pytest.approx(2.0, rel=1e-10)


def test_estimate_beta_exact_inverse():
    A = laplacian_2d(3)
    inverse = np.linalg.inv(A.to_dense())
    assert estimate_beta(A, lambda r: inverse @ r) == pytest.approx(1.0, abs=1e-12)


def test_estimate_beta_never_exceeds_largest_eigenvalue():
    A = laplacian_2d(6)
    beta = estimate_beta(A, IdentityPreconditioner(A.n), iters=20)
    assert beta <= np.linalg.eigvalsh(A.to_dense())[-1] * (1 + 1e-12)


def test_scale_for_spd():
    factor = TriangularFactor(L=sps.identity(2, format="csr"))
    assert scale_for_spd(factor, 1.2057, 1.1).sigma == pytest.approx(np.sqrt(1.32627), rel=1e-12)
    assert scale_for_spd(factor, 1.2057, 1.1).sigma == pytest.approx(1.1516, abs=1e-4)
    assert scale_for_spd(factor, 0.5, 1.1).sigma == 1.0
    assert scale_for_spd(factor, 1.4, 1.4).sigma == pytest.approx(1.4)


@pytest.mark.parametrize("beta, margin", [(0.0, 1.1), (1.0, 1.0)])
def test_scale_for_spd_rejects_bad_arguments(beta, margin):
    with pytest.raises(ValueError):
        scale_for_spd(TriangularFactor(L=sps.identity(2, format="csr")), beta, margin)


@pytest.mark.parametrize(
    "choice, expected",
    [("identity", ("identity", None)), ("Jacobi", ("jacobi", None)), ("ic0", ("ic0", None)),
     ("ict:0.01", ("ict", 0.01)), ("ICT:1e-3", ("ict", 1e-3))],
)
def test_parse_precond_choice(choice, expected):
    assert parse_precond_choice(choice) == expected


@pytest.mark.parametrize("choice", ["ict", "ict:abc", "ict:-1", "ic0:2", "ilu"])
def test_parse_precond_choice_rejects(choice):
    with pytest.raises(ValueError):
        parse_precond_choice(choice)


def test_build_base_kinds():
    A = laplacian_2d(3)
    assert isinstance(build_base_preconditioner(A, "identity"), IdentityPreconditioner)
    assert isinstance(build_base_preconditioner(A, "jacobi"), JacobiPreconditioner)
    ic = build_base_preconditioner(A, "ict:0.01")
    assert isinstance(ic, IncompleteCholeskyPreconditioner)
    assert ic.describe().startswith("ict(0.01)")


def test_build_base_scaling_pushes_spectrum_below_one():
    A = laplacian_2d(10)
    P = build_base_preconditioner(A, "ic0", scaling_margin=1.1)
    assert P.factor.sigma >= 1.0
    assert estimate_beta(A, P) < 1.0


@pytest.mark.parametrize("choice, kind", [("identity", IdentityPreconditioner), ("jacobi", JacobiPreconditioner)])
def test_build_base_warns_when_margin_cannot_apply(caplog, choice, kind):
    A = laplacian_2d(3)
    with caplog.at_level("WARNING", logger="qnprec.base"):
        P = build_base_preconditioner(A, choice, scaling_margin=1.1)
    assert isinstance(P, kind)
    assert any("scaling_margin" in record.getMessage() and record.levelname == "WARNING" for record in caplog.records)


def test_build_base_ic_margin_does_not_warn(caplog):
    with caplog.at_level("WARNING", logger="qnprec.base"):
        build_base_preconditioner(laplacian_2d(4), "ic0", scaling_margin=1.1)
    assert not [record for record in caplog.records if "scaling_margin" in record.getMessage()]


def test_build_base_retries_with_diagonal_shift():
    A = SparseMatrix.from_any(np.array([[1.0, 2.0], [2.0, 1.0]]))
    with pytest.raises(FactorizationBreakdownError):
        build_base_preconditioner(A, "ic0", shift_retries=5, shift_start=1e-3)
    P = build_base_preconditioner(A, "ic0", shift_retries=12, shift_start=1e-3)
    assert isinstance(P, IncompleteCholeskyPreconditioner)
    assert np.all(np.isfinite(P.apply(np.array([1.0, 1.0]))))
