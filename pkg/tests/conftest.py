"""Shared fixtures and finite-difference helpers for the test suite."""

import numpy as np
import pytest

from dalsm.likelihood import (
    EVENT,
    INTERVAL,
    RIGHT,
    ObservationSet,
    build_design,
)
from dalsm.splines import KnotGrid, build_basis


@pytest.fixture
def rng():
    return np.random.default_rng(42)


def finite_diff_grad(f, x, eps=1e-6):
    """Central-difference gradient of a scalar function."""
    x = np.asarray(x, dtype=float)
    g = np.empty(x.size)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = eps
        g[i] = (f(x + e) - f(x - e)) / (2.0 * eps)
    return g


def finite_diff_hess(f, x, eps=1e-4):
    """Central-difference Hessian of a scalar function."""
    x = np.asarray(x, dtype=float)
    n = x.size
    H = np.empty((n, n))
    for i in range(n):
        e = np.zeros(n)
        e[i] = eps
        gp = finite_diff_grad(f, x + e, eps)
        gm = finite_diff_grad(f, x - e, eps)
        H[i] = (gp - gm) / (2.0 * eps)
    return 0.5 * (H + H.T)


def rel_err(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    scale = max(np.max(np.abs(b)), 1e-10)
    return float(np.max(np.abs(a - b)) / scale)


def random_instance(rng, n=25, n_spline=6, with_smooth=True):
    """Small random censored dataset with location/dispersion designs."""
    z_mu = rng.normal(size=(n, 1))
    z_sigma = rng.normal(size=(n, 1))
    x_mu = rng.uniform(size=n)
    x_sigma = rng.uniform(size=n)
    basis = build_basis(KnotGrid.make(0.0, 1.0, n_spline + 1), recentered=True)
    dm = build_design(z_mu, [x_mu] if with_smooth else [], basis, n)
    ds = build_design(z_sigma, [x_sigma] if with_smooth else [], basis, n)

    y = rng.normal(size=n)
    kind = rng.choice([EVENT, RIGHT, INTERVAL], size=n, p=[0.6, 0.2, 0.2])
    lower = y.copy()
    upper = y.copy()
    upper[kind == RIGHT] = np.inf
    ic = kind == INTERVAL
    lower[ic] = y[ic] - rng.uniform(0.1, 0.4, size=int(ic.sum()))
    upper[ic] = y[ic] + rng.uniform(0.1, 0.4, size=int(ic.sum()))
    obs = ObservationSet(kind=kind, lower=lower, upper=upper)

    psi_mu = 0.05 * rng.normal(size=dm.X.shape[1])
    psi_sigma = 0.05 * rng.normal(size=ds.X.shape[1])
    return obs, dm, ds, psi_mu, psi_sigma
