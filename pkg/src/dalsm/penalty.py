"""Marginal-posterior selection of the additive-term penalties.

The penalty vector of one submodel is updated by Newton steps on the
log of a frozen objective: the log-likelihood and the profile matrix of
the spline block are held fixed while the determinant and prior terms
are differentiated in closed form.  The parameterization
``lambda = lambda_min + exp(nu)`` keeps the floor unconditional.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .errors import ConvergenceError, NumericalFailureError

LAMBDA_MIN = 1e-2
DEFAULT_PRIOR_RATE = 1e-4
LAMBDA_INIT = 100.0
OUTER_MAX_ITER = 50
# 1% precision on the penalties: they act on the fit through log lambda,
# and the per-iteration refresh of the profile matrix contracts slowly
NU_TOL = 1e-2


@dataclass
class MarginalLambdaState:
    nu: np.ndarray
    lambda_min: float
    M_breve: np.ndarray = field(repr=False)
    theta_hat: np.ndarray = field(repr=False)  # L x J spline coefficients
    P: np.ndarray = field(repr=False)
    prior_rate: float = DEFAULT_PRIOR_RATE
    diff_order: int = 2

    @property
    def Lambda(self) -> np.ndarray:
        return self.lambda_min + np.exp(self.nu)


def profile_matrix(Z: np.ndarray, S: np.ndarray, w: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """Schur complement of the fixed-effect block in the weighted normal matrix."""
    WZ = w[:, None] * Z
    WS = w[:, None] * S
    A = Z.T @ WZ + Q
    ZWS = Z.T @ WS
    try:
        C = sla.solve(A, ZWS, assume_a="pos")
    except sla.LinAlgError as exc:
        raise NumericalFailureError(f"singular fixed-effect block: {exc}") from exc
    return S.T @ WS - ZWS.T @ C


def _penalty_block(Lambda: np.ndarray, P: np.ndarray) -> np.ndarray:
    return np.kron(np.diag(Lambda), P)


def lambda_grad_hess(state: MarginalLambdaState):
    """Gradient and Hessian of the frozen marginal log-posterior in lambda."""
    Lambda = state.Lambda
    J = Lambda.size
    L = state.P.shape[0]
    r = state.diff_order
    A = state.M_breve + _penalty_block(Lambda, state.P)
    try:
        Ainv = np.linalg.inv(A)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailureError(f"singular profile system: {exc}") from exc
    R = []
    for j in range(J):
        Rj = np.zeros_like(A)
        block = Ainv[:, j * L:(j + 1) * L] @ state.P
        Rj[:, j * L:(j + 1) * L] = block
        R.append(Rj)
    U = np.empty(J)
    H = np.empty((J, J))
    for j in range(J):
        theta_j = state.theta_hat[:, j]
        rough = float(theta_j @ state.P @ theta_j)
        U[j] = (L - r) / (2.0 * Lambda[j]) - (state.prior_rate + 0.5 * rough) \
            - 0.5 * np.trace(R[j])
        for k in range(j, J):
            val = 0.5 * np.trace(R[j] @ R[k])
            if j == k:
                val -= (L - r) / (2.0 * Lambda[j] ** 2)
            H[j, k] = H[k, j] = val
    if not np.all(np.isfinite(U)) or not np.all(np.isfinite(H)):
        raise NumericalFailureError("non-finite traces in penalty gradient")
    return U, H


def nu_grad_hess(state: MarginalLambdaState):
    """Chain-rule transform of the lambda gradient/Hessian to the nu scale."""
    U_lam, H_lam = lambda_grad_hess(state)
    e = np.exp(state.nu)
    U_nu = e * U_lam
    H_nu = np.outer(e, e) * H_lam + np.diag(e * U_lam)
    return U_nu, H_nu


def frozen_objective(state: MarginalLambdaState, Lambda: np.ndarray | None = None) -> float:
    """The frozen objective up to the constant log-likelihood term."""
    Lambda = state.Lambda if Lambda is None else np.asarray(Lambda, dtype=float)
    L = state.P.shape[0]
    r = state.diff_order
    val = 0.0
    for j in range(Lambda.size):
        theta_j = state.theta_hat[:, j]
        rough = float(theta_j @ state.P @ theta_j)
        val += (L - r) / 2.0 * np.log(Lambda[j]) \
            - (state.prior_rate + 0.5 * rough) * Lambda[j]
    A = state.M_breve + _penalty_block(Lambda, state.P)
    sign, logdet = np.linalg.slogdet(A)
    if sign <= 0:
        return -np.inf
    return val - 0.5 * logdet


def select_lambda(Lambda0: np.ndarray, refresh, P: np.ndarray,
                  prior_rate: float = DEFAULT_PRIOR_RATE,
                  lambda_min: float = LAMBDA_MIN, diff_order: int = 2,
                  max_outer: int = OUTER_MAX_ITER, tol: float = NU_TOL,
                  log=None):
    """Newton iterations on nu with per-iteration refresh of the block fit.

    ``refresh(Lambda)`` must re-estimate the block coefficients at the
    given penalties and return ``(M_breve, theta_hat)`` with the profile
    matrix and the per-term spline coefficients.
    """
    Lambda = np.maximum(np.atleast_1d(np.asarray(Lambda0, dtype=float)), lambda_min + 1e-12)
    nu = np.log(Lambda - lambda_min + 1e-12)
    trace = []
    for outer in range(max_outer):
        M_breve, theta_hat = refresh(lambda_min + np.exp(nu))
        state = MarginalLambdaState(nu=nu.copy(), lambda_min=lambda_min,
                                    M_breve=M_breve, theta_hat=theta_hat, P=P,
                                    prior_rate=prior_rate, diff_order=diff_order)
        U_nu, H_nu = nu_grad_hess(state)
        step = None
        try:
            evals = np.linalg.eigvalsh(H_nu)
            if np.all(evals < 0):
                step = np.linalg.solve(-H_nu, U_nu)
        except np.linalg.LinAlgError:
            step = None
        if step is None:
            # indefinite curvature: fall back to gradient ascent with backtracking
            if log is not None:
                log.append({"outer": outer, "fallback": "gradient"})
            step = U_nu / max(np.max(np.abs(U_nu)), 1.0)
        base = frozen_objective(state)
        frac = 1.0
        for _ in range(30):
            cand = nu + frac * step
            if np.max(np.abs(cand)) < 50 and frozen_objective(
                    state, lambda_min + np.exp(cand)) >= base - 1e-10:
                break
            frac *= 0.5
        nu = nu + frac * step
        move = float(np.max(np.abs(frac * step)))
        trace.append({"outer": outer, "nu": nu.copy(), "move": move})
        if move < tol:
            return lambda_min + np.exp(nu), trace
    raise ConvergenceError(
        f"penalty selection did not settle in {max_outer} outer iterations", trace)
