"""Cubic B-spline bases on equidistant knots with difference penalties.

Raw bases satisfy the partition of unity on their support.  Recentered
bases (used for additive terms) subtract the average value of each raw
column so that every retained column integrates to zero, and drop the
last raw column for identifiability: a basis of size ``n_basis`` raw
columns yields ``n_basis - 1`` recentered columns.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import BSpline

from .errors import InvalidConfigurationError, OutOfSupportError

_DEGREE = 3  # cubic throughout


@dataclass(frozen=True)
class KnotGrid:
    """Equidistant knot layout for a cubic B-spline basis.

    ``knots`` holds the full vector including the three extra equidistant
    knots added on each side so that every basis function is a proper
    cubic B-spline (no repeated boundary knots).
    """

    lower: float
    upper: float
    n_basis: int
    knots: np.ndarray = field(repr=False)

    @classmethod
    def make(cls, lower: float, upper: float, n_basis: int) -> "KnotGrid":
        if n_basis < _DEGREE + 1:
            raise InvalidConfigurationError(
                f"n_basis must be >= {_DEGREE + 1} for a cubic basis, got {n_basis}"
            )
        if not lower < upper:
            raise InvalidConfigurationError(f"need lower < upper, got ({lower}, {upper})")
        n_seg = n_basis - _DEGREE
        dx = (upper - lower) / n_seg
        knots = lower + dx * np.arange(-_DEGREE, n_seg + _DEGREE + 1)
        return cls(lower=float(lower), upper=float(upper), n_basis=int(n_basis), knots=knots)


def _raw_design(grid: KnotGrid, x: np.ndarray, deriv_order: int) -> np.ndarray:
    """Evaluate all raw basis columns (or their derivatives) at x.

    All columns are produced in one sparse design-matrix call; derivatives
    use the equidistant-knot identity reducing a degree-p derivative to a
    finite difference of the degree-(p - deriv) basis on the same knots.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    t = grid.knots
    if deriv_order == 0:
        return BSpline.design_matrix(x, t, _DEGREE).toarray()
    dx = t[1] - t[0]
    if deriv_order == 1:
        R = BSpline.design_matrix(x, t, _DEGREE - 1).toarray()
        return (R[:, :-1] - R[:, 1:]) / dx
    if deriv_order == 2:
        R = BSpline.design_matrix(x, t, _DEGREE - 2).toarray()
        return (R[:, :-2] - 2.0 * R[:, 1:-1] + R[:, 2:]) / dx**2
    raise InvalidConfigurationError(f"unsupported derivative order {deriv_order}")


@dataclass(frozen=True)
class SplineBasis:
    grid: KnotGrid
    recentered: bool
    # average value of each raw column over (lower, upper); zeros when raw
    centering_offsets: np.ndarray = field(repr=False)

    @property
    def n_col(self) -> int:
        return self.grid.n_basis - 1 if self.recentered else self.grid.n_basis


def build_basis(grid: KnotGrid, recentered: bool = False) -> SplineBasis:
    offsets = np.zeros(grid.n_basis)
    if recentered:
        # fixed Simpson rule: deterministic and far below tolerance needs
        xs = np.linspace(grid.lower, grid.upper, 2001)
        vals = _raw_design(grid, xs, 0)
        from scipy.integrate import simpson

        offsets = simpson(vals, x=xs, axis=0) / (grid.upper - grid.lower)
    return SplineBasis(grid=grid, recentered=recentered, centering_offsets=offsets)


def eval_basis(basis: SplineBasis, x: np.ndarray, deriv_order: int = 0) -> np.ndarray:
    """Design matrix of the basis (or an analytic derivative) at points x."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    g = basis.grid
    tol = 1e-12 * (g.upper - g.lower)
    if np.any(x < g.lower - tol) or np.any(x > g.upper + tol):
        raise OutOfSupportError(
            f"evaluation points outside [{g.lower}, {g.upper}]"
        )
    x = np.clip(x, g.lower, g.upper)
    raw = _raw_design(g, x, deriv_order)
    if not basis.recentered:
        return raw
    out = raw[:, :-1]
    if deriv_order == 0:
        out = out - basis.centering_offsets[:-1]
    return out


@dataclass(frozen=True)
class PenaltyMatrix:
    order: int
    dim: int
    matrix: np.ndarray = field(repr=False)
    diff_matrix: np.ndarray = field(repr=False)


def build_penalty(dim: int, order: int) -> PenaltyMatrix:
    """Difference penalty P = D'D of the given order, rank dim - order."""
    if order >= dim:
        raise InvalidConfigurationError(f"difference order {order} must be < dim {dim}")
    D = np.diff(np.eye(dim), n=order, axis=0)
    return PenaltyMatrix(order=order, dim=dim, matrix=D.T @ D, diff_matrix=D)
