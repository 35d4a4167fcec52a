"""Censoring-aware log-likelihood of the location-scale model.

The per-unit gradient/curvature system (the ``omega`` and ``w`` vectors)
is computed from hazard-scale quantities of the standardized error
distribution, so any error model exposing ``interp(r) -> (f, S, h, h', h'')``
can be plugged in: the nonparametric spline density or the closed-form
standard Normal used by the working-Normal comparator.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol

import numpy as np
from scipy.stats import norm

from .errors import InvalidConfigurationError
from .splines import SplineBasis, eval_basis

_LOG_FLOOR = np.log(1e-300)

# observation kind codes
EVENT, RIGHT, INTERVAL = 0, 1, 2
_KIND_NAMES = {"event": EVENT, "right": RIGHT, "interval": INTERVAL}


@dataclass(frozen=True)
class CensoredObservation:
    """One response record: exact, right-censored or interval-censored."""

    kind: str
    lower: float
    upper: float

    @classmethod
    def event(cls, t: float) -> "CensoredObservation":
        return cls("event", float(t), float(t))

    @classmethod
    def right_censored(cls, t: float) -> "CensoredObservation":
        return cls("right", float(t), np.inf)

    @classmethod
    def interval(cls, lo: float, hi: float) -> "CensoredObservation":
        if not lo < hi:
            raise InvalidConfigurationError(f"interval needs lower < upper, got ({lo}, {hi})")
        return cls("interval", float(lo), float(hi))


@dataclass(frozen=True)
class ObservationSet:
    """Vectorized view of a list of censored observations."""

    kind: np.ndarray  # int codes
    lower: np.ndarray
    upper: np.ndarray

    @classmethod
    def from_observations(cls, obs) -> "ObservationSet":
        kinds = np.array([_KIND_NAMES[o.kind] for o in obs], dtype=int)
        lo = np.array([o.lower for o in obs], dtype=float)
        hi = np.array([o.upper for o in obs], dtype=float)
        return cls(kind=kinds, lower=lo, upper=hi)

    def __len__(self) -> int:
        return self.kind.size


class ErrorModel(Protocol):
    def interp(self, r: np.ndarray):
        """Return (f, S, h, h', h'') at residual values r."""
        ...


class NormalError:
    """Standard Normal error model with closed-form hazard derivatives."""

    def interp(self, r):
        r = np.atleast_1d(np.asarray(r, dtype=float))
        f = norm.pdf(r)
        S = norm.sf(r)
        h = f / S
        hp = h * (h - r)          # d/dr log h = h - r
        hpp = hp * (h - r) + h * (hp - 1.0)
        return f, S, h, hp, hpp


@dataclass(frozen=True)
class DesignBlock:
    """Fixed-effect design plus recentered spline designs of one submodel."""

    Z: np.ndarray
    S_blocks: list
    X: np.ndarray = field(repr=False)
    basis: SplineBasis | None = None

    @property
    def n_fixed(self) -> int:
        return self.Z.shape[1]

    @property
    def n_terms(self) -> int:
        return len(self.S_blocks)

    @property
    def n_spline(self) -> int:
        return self.S_blocks[0].shape[1] if self.S_blocks else 0


def build_design(z: np.ndarray | None, smooth_x: list, basis: SplineBasis | None,
                 n: int) -> DesignBlock:
    """Assemble [Z, S_1, ..., S_J] with a leading column of ones in Z."""
    ones = np.ones((n, 1))
    Z = ones if z is None or z.size == 0 else np.hstack([ones, np.asarray(z, dtype=float)])
    S_blocks = [eval_basis(basis, x) for x in smooth_x]
    X = np.hstack([Z] + S_blocks) if S_blocks else Z
    return DesignBlock(Z=Z, S_blocks=S_blocks, X=X, basis=basis)


@dataclass
class LinearPredictorState:
    """Linear predictors and residual bounds for the current coefficients."""

    mu: np.ndarray
    log_sigma: np.ndarray
    sigma: np.ndarray
    obs: ObservationSet
    r_lower: np.ndarray  # residual-scale lower bound (= r_i for event/RC)
    r_upper: np.ndarray  # residual-scale upper bound (inf unless interval)


def make_state(obs: ObservationSet, design_mu: DesignBlock, design_sigma: DesignBlock,
               psi_mu: np.ndarray, psi_sigma: np.ndarray) -> LinearPredictorState:
    mu = design_mu.X @ psi_mu
    log_sigma = design_sigma.X @ psi_sigma
    sigma = np.exp(log_sigma)
    r_lo = (obs.lower - mu) / sigma
    r_hi = np.where(np.isfinite(obs.upper), (obs.upper - mu) / sigma, np.inf)
    return LinearPredictorState(mu=mu, log_sigma=log_sigma, sigma=sigma, obs=obs,
                                r_lower=r_lo, r_upper=r_hi)


def loglik(state: LinearPredictorState, density: ErrorModel) -> float:
    """Sum of per-unit contributions; degenerate intervals floored."""
    return float(np.sum(unit_loglik(state, density)))


def unit_loglik(state: LinearPredictorState, density: ErrorModel) -> np.ndarray:
    kind = state.obs.kind
    out = np.empty(kind.size)

    ev = kind == EVENT
    if np.any(ev):
        f, _, _, _, _ = density.interp(state.r_lower[ev])
        out[ev] = -state.log_sigma[ev] + np.log(np.maximum(f, 1e-300))

    rc = kind == RIGHT
    if np.any(rc):
        _, S, _, _, _ = density.interp(state.r_lower[rc])
        out[rc] = np.log(np.maximum(S, 1e-300))

    ic = kind == INTERVAL
    if np.any(ic):
        _, S_lo, _, _, _ = density.interp(state.r_lower[ic])
        _, S_hi, _, _, _ = density.interp(state.r_upper[ic])
        prob = S_lo - S_hi
        out[ic] = np.where(prob > 0, np.log(np.maximum(prob, 1e-300)), _LOG_FLOOR)
    return out


@dataclass(frozen=True)
class WeightVectors:
    omega_mu: np.ndarray
    omega_sigma: np.ndarray
    w_mu: np.ndarray
    w_sigma: np.ndarray


def weights(state: LinearPredictorState, density: ErrorModel) -> WeightVectors:
    """Per-unit score factors and observed-information diagonals.

    ``omega`` gives the exact per-unit gradient factor of the censored
    log-likelihood w.r.t. the location / log-dispersion predictors; ``w``
    the corresponding curvature diagonals.  Individual ``w`` entries can
    be negative for interval-censored units (observed, not expected,
    information); any flooring is left to the caller.
    """
    n = len(state.obs)
    omega_mu = np.zeros(n)
    omega_sigma = np.zeros(n)
    w_mu = np.zeros(n)
    w_sigma = np.zeros(n)
    sigma = state.sigma
    kind = state.obs.kind

    ev_rc = kind != INTERVAL
    if np.any(ev_rc):
        d = (kind[ev_rc] == EVENT).astype(float)
        r = state.r_lower[ev_rc]
        _, _, h, hp, hpp = density.interp(r)
        rat = hp / h
        s = sigma[ev_rc]
        omega_mu[ev_rc] = -(d * rat - h) / s
        omega_sigma[ev_rc] = -d * r * rat - d + r * h
        w_mu[ev_rc] = (d * rat**2 - d * hpp / h + hp) / s**2
        # observed information of the event branch carries -r h'/h (the
        # derivative of -1 - r g(r) in the log-dispersion), not +r h'/h
        w_sigma[ev_rc] = d * (rat**2 * r**2 - rat * r - (hpp / h) * r**2) + hp * r**2 + h * r

    ic = kind == INTERVAL
    if np.any(ic):
        rL = state.r_lower[ic]
        rR = state.r_upper[ic]
        fL, SL, hL, hpL, _ = density.interp(rL)
        fR, SR, hR, hpR, _ = density.interp(rR)
        dS = SL - SR
        dS = np.where(np.abs(dS) > 1e-300, dS, 1e-300)
        gL = hpL / hL - hL
        gR = hpR / hR - hR
        mL = 1.0 + rL * gL
        mR = 1.0 + rR * gR
        s = sigma[ic]
        omega_mu[ic] = (fL - fR) / dS / s
        omega_sigma[ic] = (rL * fL - rR * fR) / dS
        w_mu[ic] = ((fL * gL - fR * gR) / dS + ((fL - fR) / dS) ** 2) / s**2
        w_sigma[ic] = (rL * fL * mL - rR * fR * mR) / dS + ((rL * fL - rR * fR) / dS) ** 2

    return WeightVectors(omega_mu=omega_mu, omega_sigma=omega_sigma, w_mu=w_mu, w_sigma=w_sigma)
