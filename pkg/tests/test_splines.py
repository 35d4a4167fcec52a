"""B-spline bases: recursion oracle, unity, recentering and penalties."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dalsm.errors import InvalidConfigurationError, OutOfSupportError
from dalsm.splines import (
    KnotGrid,
    build_basis,
    build_penalty,
    eval_basis,
)


def cox_de_boor(t, i, p, x):
    """Textbook recursive B-spline evaluation, used as an oracle."""
    if p == 0:
        return 1.0 if t[i] <= x < t[i + 1] else 0.0
    left = 0.0
    if t[i + p] > t[i]:
        left = (x - t[i]) / (t[i + p] - t[i]) * cox_de_boor(t, i, p - 1, x)
    right = 0.0
    if t[i + p + 1] > t[i + 1]:
        right = (t[i + p + 1] - x) / (t[i + p + 1] - t[i + 1]) \
            * cox_de_boor(t, i + 1, p - 1, x)
    return left + right


def test_raw_basis_matches_recursion_oracle(rng):
    grid = KnotGrid.make(-2.0, 3.0, 9)
    basis = build_basis(grid)
    xs = rng.uniform(-2.0, 3.0, size=12)
    D = eval_basis(basis, xs)
    for r, x in enumerate(xs):
        for i in range(grid.n_basis):
            ref = cox_de_boor(grid.knots, i, 3, x)
            assert D[r, i] == pytest.approx(ref, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.floats(min_value=-2.0, max_value=3.0, allow_nan=False))
def test_partition_of_unity(x):
    basis = build_basis(KnotGrid.make(-2.0, 3.0, 11))
    row = eval_basis(basis, np.array([x]))[0]
    assert row.sum() == pytest.approx(1.0, abs=1e-10)
    assert np.all(row >= 0.0)


def test_derivatives_match_finite_differences(rng):
    basis = build_basis(KnotGrid.make(0.0, 1.0, 8))
    xs = rng.uniform(0.05, 0.95, size=9)
    eps = 1e-6
    d1 = eval_basis(basis, xs, deriv_order=1)
    d2 = eval_basis(basis, xs, deriv_order=2)
    fd1 = (eval_basis(basis, xs + eps) - eval_basis(basis, xs - eps)) / (2 * eps)
    fd2 = (eval_basis(basis, xs + eps, 1) - eval_basis(basis, xs - eps, 1)) / (2 * eps)
    assert np.max(np.abs(d1 - fd1)) < 1e-5
    assert np.max(np.abs(d2 - fd2)) < 1e-4


def test_recentered_columns_integrate_to_zero():
    basis = build_basis(KnotGrid.make(0.0, 1.0, 11), recentered=True)
    assert basis.n_col == 10
    xs = np.linspace(0.0, 1.0, 4001)
    D = eval_basis(basis, xs)
    from scipy.integrate import simpson

    integrals = simpson(D, x=xs, axis=0)
    assert np.max(np.abs(integrals)) < 1e-8


def test_recentered_drops_last_column():
    raw = build_basis(KnotGrid.make(0.0, 1.0, 7))
    cen = build_basis(KnotGrid.make(0.0, 1.0, 7), recentered=True)
    xs = np.linspace(0.0, 1.0, 13)
    R = eval_basis(raw, xs)
    C = eval_basis(cen, xs)
    assert C.shape[1] == R.shape[1] - 1
    # recentered columns are raw columns shifted by a constant offset
    shifts = R[:, :-1] - C
    assert np.max(np.abs(shifts - shifts[0])) < 1e-12


@pytest.mark.parametrize("dim,order", [(6, 1), (8, 2), (10, 3)])
def test_penalty_rank_and_null_space(dim, order):
    pen = build_penalty(dim, order)
    assert pen.matrix.shape == (dim, dim)
    assert np.linalg.matrix_rank(pen.matrix) == dim - order
    # polynomials of degree < order in the coefficient index are unpenalized
    for deg in range(order):
        v = np.arange(dim, dtype=float) ** deg
        assert float(v @ pen.matrix @ v) == pytest.approx(0.0, abs=1e-8)
    assert np.allclose(pen.matrix, pen.diff_matrix.T @ pen.diff_matrix)


def test_invalid_configurations_raise():
    with pytest.raises(InvalidConfigurationError):
        KnotGrid.make(0.0, 1.0, 3)
    with pytest.raises(InvalidConfigurationError):
        KnotGrid.make(1.0, 0.0, 8)
    with pytest.raises(InvalidConfigurationError):
        build_penalty(4, 4)


def test_out_of_support_raises():
    basis = build_basis(KnotGrid.make(0.0, 1.0, 8))
    with pytest.raises(OutOfSupportError):
        eval_basis(basis, np.array([1.5]))
