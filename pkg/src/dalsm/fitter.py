"""Global fitting loop for the double additive location-scale model.

Alternates (1) error-density re-estimation on standardized residuals,
(2) location-block and (3) dispersion-block Newton updates, and
(4) marginal-posterior selection of the additive-term penalties, until
the coefficients, log-penalties and density coefficients jointly settle.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .density import BinGrid, ErrorDensity, hazard_basis, select_tau
from .errors import ConvergenceError, OutOfSupportError, UnidentifiableModelError
from .likelihood import (
    INTERVAL,
    RIGHT,
    DesignBlock,
    NormalError,
    ObservationSet,
    build_design,
    loglik,
    make_state,
    weights,
)
from .penalty import LAMBDA_INIT, LAMBDA_MIN, select_lambda, profile_matrix
from .regression import PenaltyPrecision, update_dispersion, update_location
from .splines import KnotGrid, build_basis, build_penalty, eval_basis


@dataclass
class ModelSpec:
    """Formulas and numerical settings of one model fit."""

    location_fixed: list = field(default_factory=list)
    location_smooth: list = field(default_factory=list)
    dispersion_fixed: list = field(default_factory=list)
    dispersion_smooth: list = field(default_factory=list)
    n_spline: int = 10          # recentered B-splines per additive term
    n_hazard: int = 20          # log-hazard B-splines of the error density
    support: tuple = (-6.0, 6.0)
    n_bins: int = 300
    penalty_order: int = 2
    q_scale: float = 1e-6
    lambda_min: float = LAMBDA_MIN
    lambda_init: float = LAMBDA_INIT
    prior_rate: float = 1e-4    # Gamma rate of the lambda priors
    tau_prior_b: float = 1e-4
    outer_tol: float = 1e-5
    lambda_tol: float = 1e-2    # absolute tolerance on log lambda changes
    # sup-norm stability of the density table below which it is pinned;
    # well under the statistical error of the estimate at practical n
    density_freeze_tol: float = 5e-4
    max_outer: int = 50
    error_model: str = "np"     # "np" or "normal" (working-Normal comparator)


@dataclass
class PreparedData:
    obs: ObservationSet
    design_mu: DesignBlock
    design_sigma: DesignBlock
    transforms: dict            # smooth covariate name -> (min, max)
    n: int


def prepare_data(spec: ModelSpec, obs, covariates) -> PreparedData:
    """Assemble design blocks; smooth covariates are min-max scaled to (0,1)."""
    if not isinstance(obs, ObservationSet):
        obs = ObservationSet.from_observations(obs)
    n = len(obs)
    transforms = {}

    def scaled(name):
        x = np.asarray(covariates[name], dtype=float)
        if name not in transforms:
            lo, hi = float(x.min()), float(x.max())
            if hi <= lo:
                hi = lo + 1.0
            transforms[name] = (lo, hi)
        lo, hi = transforms[name]
        return (x - lo) / (hi - lo)

    basis = build_basis(KnotGrid.make(0.0, 1.0, spec.n_spline + 1), recentered=True)

    def block(fixed, smooth):
        z = (np.column_stack([np.asarray(covariates[c], dtype=float) for c in fixed])
             if fixed else None)
        xs = [scaled(c) for c in smooth]
        return build_design(z, xs, basis if smooth else None, n)

    return PreparedData(obs=obs,
                        design_mu=block(spec.location_fixed, spec.location_smooth),
                        design_sigma=block(spec.dispersion_fixed, spec.dispersion_smooth),
                        transforms=transforms, n=n)


@dataclass
class FitResult:
    spec: ModelSpec
    psi_mu: np.ndarray
    psi_sigma: np.ndarray
    Sigma_mu: np.ndarray = field(repr=False)
    Sigma_sigma: np.ndarray = field(repr=False)
    lambda_mu: np.ndarray
    lambda_sigma: np.ndarray
    density: ErrorDensity | None
    edf_mu: dict
    edf_sigma: dict
    converged: bool
    n_outer: int
    trace: list = field(repr=False)
    transforms: dict = field(default_factory=dict)
    elapsed_seconds: float = 0.0
    clamp_count: int = 0

    def error_model(self):
        return self.density if self.density is not None else NormalError()

    def term_slice(self, block: str, term_index: int):
        design = self._design_meta[block]
        n_fixed, L = design
        start = n_fixed + term_index * L
        return slice(start, start + L)

    _design_meta: dict = field(default_factory=dict, repr=False)


def _spline_normal_phi(basis, grid):
    """Spline coefficients approximating the standard Normal log-hazard."""
    u = grid.midpoints
    target = np.log(norm.pdf(u) / np.maximum(norm.sf(u), 1e-300))
    B = eval_basis(basis, u)
    return np.linalg.solve(B.T @ B + 1e-8 * np.eye(B.shape[1]), B.T @ target)


def initialize(spec: ModelSpec, data: PreparedData):
    """Starting values: penalized LS on midpointed data, Gaussian error."""
    obs = data.obs
    keep = obs.kind != RIGHT
    if not np.any(keep):
        raise UnidentifiableModelError("all observations are right-censored")
    y = np.where(obs.kind == INTERVAL, 0.5 * (obs.lower + obs.upper), obs.lower)[keep]
    Xm = data.design_mu.X[keep]

    P = build_penalty(spec.n_spline, spec.penalty_order).matrix
    J1 = data.design_mu.n_terms
    J2 = data.design_sigma.n_terms
    lam_mu = np.full(max(J1, 1), spec.lambda_init)[:J1]
    lam_sigma = np.full(max(J2, 1), spec.lambda_init)[:J2]
    pen_mu = PenaltyPrecision.build(data.design_mu.n_fixed, lam_mu, P, spec.q_scale)
    pen_sigma = PenaltyPrecision.build(data.design_sigma.n_fixed, lam_sigma, P, spec.q_scale)

    psi_mu = np.linalg.solve(Xm.T @ Xm + pen_mu.K, Xm.T @ y)
    resid = y - Xm @ psi_mu
    mse = float(np.mean(resid**2))
    psi_sigma = np.zeros(data.design_sigma.X.shape[1])
    psi_sigma[0] = 0.5 * np.log(max(mse, 1e-12))

    grid = BinGrid(spec.support[0], spec.support[1], spec.n_bins)
    haz_basis = hazard_basis(grid, spec.n_hazard)
    phi = _spline_normal_phi(haz_basis, grid)
    dens = ErrorDensity(basis=haz_basis, phi=phi, tau=1.0, grid=grid)
    return psi_mu, psi_sigma, pen_mu, pen_sigma, dens


def residual_observations(obs: ObservationSet, mu, sigma) -> ObservationSet:
    r_lo = (obs.lower - mu) / sigma
    r_hi = np.where(np.isfinite(obs.upper), (obs.upper - mu) / sigma, np.inf)
    return ObservationSet(kind=obs.kind, lower=r_lo, upper=r_hi)


def _clamp_interval_obs(obs: ObservationSet, grid: BinGrid) -> ObservationSet:
    """Keep interval residuals at least partially inside the density support."""
    lo = obs.lower.copy()
    hi = obs.upper.copy()
    ic = obs.kind == INTERVAL
    eps = grid.width
    lo[ic] = np.minimum(lo[ic], grid.r_max - eps)
    hi[ic] = np.maximum(hi[ic], grid.r_min + eps)
    return ObservationSet(kind=obs.kind, lower=lo, upper=hi)


def fit(spec: ModelSpec, data: PreparedData) -> FitResult:
    t0 = time.perf_counter()
    psi_mu, psi_sigma, pen_mu, pen_sigma, dens = initialize(spec, data)
    obs = data.obs
    dm, ds = data.design_mu, data.design_sigma
    use_np = spec.error_model == "np"
    error_model = dens if use_np else NormalError()
    phi = dens.phi.copy()
    tau = dens.tau

    trace = []
    converged = False
    density_frozen = not use_np  # closed-form error model never moves
    lambda_frozen = False
    prev_step_phi = None
    prev_psi_cat = None
    prev_step_psi = None
    outer = 0
    mu_state = None
    sigma_state = None
    for outer in range(1, spec.max_outer + 1):
        prev = np.concatenate([psi_mu, psi_sigma, phi if use_np else []])
        prev_loglam = np.concatenate([np.log(pen_mu.Lambda), np.log(pen_sigma.Lambda)])

        if use_np and not density_frozen:
            mu = dm.X @ psi_mu
            sigma = np.exp(ds.X @ psi_sigma)
            res_obs = _clamp_interval_obs(residual_observations(obs, mu, sigma),
                                          dens.grid)
            phi_prev = phi.copy()
            table_prev = dens.density.copy()
            tau, phi, _, _ = select_tau(res_obs, dens.grid, dens.basis,
                                        phi_init=phi, prior_b=spec.tau_prior_b,
                                        tau_init=tau, current=dens, strict=False)
            step_phi = phi - phi_prev
            if outer > 3 and prev_step_phi is not None:
                # Aitken relaxation on the density coefficients: the
                # alternation with the regression blocks has one slow mode
                # (oscillating or monotone) whose multiplier is estimated
                # from consecutive updates
                denom = float(prev_step_phi @ prev_step_phi)
                mult = float(step_phi @ prev_step_phi) / max(denom, 1e-300)
                mult = np.clip(mult, -0.9, 0.9)
                relax = float(np.clip(1.0 / (1.0 - mult), 0.3, 2.5))
                phi = phi_prev + relax * step_phi
            prev_step_phi = step_phi
            dens = ErrorDensity(basis=dens.basis, phi=phi, tau=tau, grid=dens.grid,
                                clamp_count=dens.clamp_count)
            error_model = dens
            # once the density stops moving at the resolution of the bin
            # table, freeze it so the regression blocks can settle fast
            if outer > 3 and np.max(np.abs(dens.density - table_prev)) \
                    < spec.density_freeze_tol:
                density_frozen = True

        mu_state = update_location(psi_mu, psi_sigma, pen_mu, error_model, obs, dm, ds)
        psi_mu = mu_state.psi
        sigma_state = update_dispersion(psi_sigma, psi_mu, pen_sigma, pen_mu,
                                        error_model, obs, dm, ds)
        psi_sigma = sigma_state.psi

        if not lambda_frozen:
            if dm.n_terms:
                pen_mu, psi_mu, mu_state = _select_block_lambda(
                    "mu", spec, obs, dm, ds, psi_mu, psi_sigma, pen_mu, pen_sigma,
                    error_model)
            if ds.n_terms:
                pen_sigma, psi_sigma, sigma_state = _select_block_lambda(
                    "sigma", spec, obs, dm, ds, psi_mu, psi_sigma, pen_mu, pen_sigma,
                    error_model)

        cur = np.concatenate([psi_mu, psi_sigma, phi if use_np else []])
        cur_loglam = np.concatenate([np.log(pen_mu.Lambda), np.log(pen_sigma.Lambda)])
        change = float(np.max(np.abs(cur - prev) / (1.0 + np.abs(prev))))
        lam_change = float(np.max(np.abs(cur_loglam - prev_loglam))) \
            if cur_loglam.size else 0.0
        st = make_state(obs, dm, ds, psi_mu, psi_sigma)
        trace.append({"outer": outer, "change": change, "lambda_change": lam_change,
                      "change_argmax": int(np.argmax(np.abs(cur - prev)
                                                     / (1.0 + np.abs(prev)))),
                      "density_frozen": density_frozen,
                      "lambda_frozen": lambda_frozen,
                      "loglik": loglik(st, error_model),
                      "lambda_mu": pen_mu.Lambda.tolist(),
                      "lambda_sigma": pen_sigma.Lambda.tolist(),
                      "tau": tau if use_np else None})
        if density_frozen and lam_change < spec.lambda_tol:
            lambda_frozen = True

        if lambda_frozen:
            # with density and penalties pinned, the block alternation can
            # still contract slowly when the location and dispersion
            # estimates are strongly coupled; extrapolate every other pass
            psi_cat = np.concatenate([psi_mu, psi_sigma])
            if prev_psi_cat is not None:
                step_psi = psi_cat - prev_psi_cat
                if prev_step_psi is not None:
                    denom = float(prev_step_psi @ prev_step_psi)
                    mult = float(step_psi @ prev_step_psi) / max(denom, 1e-300)
                    mult = np.clip(mult, -0.95, 0.95)
                    relax = float(np.clip(1.0 / (1.0 - mult), 0.5, 20.0))
                    psi_cat = prev_psi_cat + relax * step_psi
                    psi_mu = psi_cat[:psi_mu.size]
                    psi_sigma = psi_cat[psi_mu.size:]
                    prev_step_psi = None
                else:
                    prev_step_psi = step_psi
            prev_psi_cat = np.concatenate([psi_mu, psi_sigma])
        if change < spec.outer_tol and lam_change < spec.lambda_tol:
            converged = True
            break

    edf_mu = _effective_dof_block(spec, obs, dm, ds, psi_mu, psi_sigma,
                                  pen_mu, error_model, "mu")
    edf_sigma = _effective_dof_block(spec, obs, dm, ds, psi_mu, psi_sigma,
                                     pen_sigma, error_model, "sigma")

    result = FitResult(
        spec=spec, psi_mu=psi_mu, psi_sigma=psi_sigma,
        Sigma_mu=mu_state.Sigma_lambda, Sigma_sigma=sigma_state.Sigma_lambda,
        lambda_mu=pen_mu.Lambda, lambda_sigma=pen_sigma.Lambda,
        density=dens if use_np else None,
        edf_mu=dict(zip(spec.location_smooth, edf_mu)),
        edf_sigma=dict(zip(spec.dispersion_smooth, edf_sigma)),
        converged=converged, n_outer=outer, trace=trace,
        transforms=data.transforms,
        elapsed_seconds=time.perf_counter() - t0,
        clamp_count=dens.clamp_count if use_np else 0,
    )
    result._design_meta = {
        "mu": (dm.n_fixed, dm.n_spline),
        "sigma": (ds.n_fixed, ds.n_spline),
    }
    return result


def _select_block_lambda(block, spec, obs, dm, ds, psi_mu, psi_sigma,
                         pen_mu, pen_sigma, error_model):
    """Penalty selection of one block, refreshing the block mode per update."""
    P = pen_mu.P
    state_box = {"psi_mu": psi_mu, "psi_sigma": psi_sigma, "fit": None}

    def refresh(Lambda):
        if block == "mu":
            pen = pen_mu.with_lambda(Lambda)
            fit_state = update_location(state_box["psi_mu"], state_box["psi_sigma"],
                                        pen, error_model, obs, dm, ds)
            state_box["psi_mu"] = fit_state.psi
            design, w_key = dm, "w_mu"
        else:
            pen = pen_sigma.with_lambda(Lambda)
            fit_state = update_dispersion(state_box["psi_sigma"], state_box["psi_mu"],
                                          pen, pen_mu, error_model, obs, dm, ds)
            state_box["psi_sigma"] = fit_state.psi
            design, w_key = ds, "w_sigma"
        state_box["fit"] = fit_state
        st = make_state(obs, dm, ds, state_box["psi_mu"], state_box["psi_sigma"])
        wv = weights(st, error_model)
        w = np.maximum(getattr(wv, w_key), 0.0)
        S = np.hstack(design.S_blocks)
        Q = (pen_mu if block == "mu" else pen_sigma).Q
        M = profile_matrix(design.Z, S, w, Q)
        psi = fit_state.psi
        L = design.n_spline
        theta = psi[design.n_fixed:].reshape(design.n_terms, L).T
        return M, theta

    pen0 = pen_mu if block == "mu" else pen_sigma
    try:
        Lambda, _ = select_lambda(pen0.Lambda, refresh, P,
                                  prior_rate=spec.prior_rate,
                                  lambda_min=spec.lambda_min,
                                  diff_order=spec.penalty_order)
    except ConvergenceError as exc:
        # keep the last iterate; the global loop re-enters selection anyway
        Lambda = spec.lambda_min + np.exp(exc.trace[-1]["nu"])
    refresh(Lambda)
    pen = pen0.with_lambda(Lambda)
    if block == "mu":
        return pen, state_box["psi_mu"], state_box["fit"]
    return pen, state_box["psi_sigma"], state_box["fit"]


def _effective_dof_block(spec, obs, dm, ds, psi_mu, psi_sigma, pen, error_model,
                         block):
    design = dm if block == "mu" else ds
    if not design.n_terms:
        return []
    st = make_state(obs, dm, ds, psi_mu, psi_sigma)
    wv = weights(st, error_model)
    w = np.maximum(wv.w_mu if block == "mu" else wv.w_sigma, 0.0)
    S = np.hstack(design.S_blocks)
    M = profile_matrix(design.Z, S, w, pen.Q)
    return effective_dof(M, pen.P, pen.Lambda)


def effective_dof(M_breve, P, Lambda):
    """Per-term trace of the smoother: block-diagonal of (M + P_lambda)^-1 M."""
    L = P.shape[0]
    Plam = np.kron(np.diag(Lambda), P)
    F = np.linalg.solve(M_breve + Plam, M_breve)
    return [float(np.trace(F[j * L:(j + 1) * L, j * L:(j + 1) * L]))
            for j in range(Lambda.size)]


def pointwise_bands(result: FitResult, block: str, term_index: int,
                    x_grid, level: float = 0.95):
    """Fitted additive term with symmetric Gaussian credible bands."""
    x_grid = np.atleast_1d(np.asarray(x_grid, dtype=float))
    if np.any((x_grid < 0.0) | (x_grid > 1.0)):
        raise OutOfSupportError("term evaluation grid must lie in [0, 1]")
    spec = result.spec
    basis = build_basis(KnotGrid.make(0.0, 1.0, spec.n_spline + 1), recentered=True)
    Sx = eval_basis(basis, x_grid)
    sl = result.term_slice(block, term_index)
    theta = (result.psi_mu if block == "mu" else result.psi_sigma)[sl]
    Sigma = (result.Sigma_mu if block == "mu" else result.Sigma_sigma)[sl, sl]
    fit_vals = Sx @ theta
    se = np.sqrt(np.maximum(np.einsum("ij,jk,ik->i", Sx, Sigma, Sx), 0.0))
    z = norm.ppf(0.5 + level / 2.0) if level > 0 else 0.0
    return fit_vals, fit_vals - z * se, fit_vals + z * se
