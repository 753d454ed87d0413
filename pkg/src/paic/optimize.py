"""Posterior mode search and the Gaussian (Laplace) posterior approximation.

The mode maximizes log{L(theta|y) pi(theta)} by damped Newton iterations with
an Armijo backtracking line search, falling back to gradient steps whenever
the Newton direction is not an ascent direction.  Positive coordinates
(declared by the model via ``log_scale_coords``) are searched on the log
scale; the objective is the unchanged theta-parameterization density, so the
reported mode and curvature are theta-space quantities.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .calculus import DEFAULT_DIFF, DiffConfig, grad_fd, hess_fd
from .exceptions import (
    NotPositiveDefiniteError,
    NumericalError,
    SingularHessianError,
    ValidationError,
)
from .rng import substream
from .models import ObservationSet, logpost_unnorm

MODE_TOL_SCALE = 1e-8
RIDGE_SCALE = 1e-8
ARMIJO_C = 1e-4


@dataclass(frozen=True)
class ModeResult:
    theta_hat: np.ndarray
    grad_norm: float
    iterations: int
    converged: bool
    neg_hessian: np.ndarray
    logpost: float


@dataclass(frozen=True)
class LaplaceApprox:
    """Gaussian posterior approximation N(theta_hat, covariance)."""

    mean: np.ndarray
    covariance: np.ndarray

    def marginal_sd(self) -> np.ndarray:
        return np.sqrt(np.diag(self.covariance))


class _Transform:
    """Bijection theta <-> u with selected coordinates on the log scale."""

    def __init__(self, p: int, log_coords: tuple):
        self.p = p
        self.log_coords = tuple(log_coords)
        self.mask = np.zeros(p, dtype=bool)
        for k in self.log_coords:
            self.mask[k] = True

    def to_u(self, theta: np.ndarray) -> np.ndarray:
        u = np.array(theta, dtype=float)
        if np.any(u[self.mask] <= 0):
            raise ValidationError("log-scale coordinate must be positive")
        u[self.mask] = np.log(u[self.mask])
        return u

    def to_theta(self, u: np.ndarray) -> np.ndarray:
        theta = np.array(u, dtype=float)
        theta[self.mask] = np.exp(theta[self.mask])
        return theta

    def chain(self, theta, g_theta, H_theta):
        """(grad, Hessian) of f(u) = f(theta(u)) from theta-space derivatives."""
        d1 = np.where(self.mask, theta, 1.0)  # dtheta/du
        g_u = g_theta * d1
        H_u = H_theta * np.outer(d1, d1)
        # second-derivative term: d2theta/du2 equals theta on log coords
        H_u[np.diag_indices_from(H_u)] += np.where(self.mask, g_theta * theta, 0.0)
        return g_u, H_u


def _safe_logpost(model, data, theta) -> float:
    if not model.in_support(theta):
        return -np.inf
    try:
        return logpost_unnorm(model, data, theta)
    except NumericalError:
        return -np.inf


def _theta_derivatives(model, data, theta, cfg: DiffConfig):
    if getattr(model, "has_analytic_derivatives", False):
        g = model.score_matrix(data, theta).sum(axis=0)
        H = model.hess_term_sum(data, theta)
        return g, H

    def f(th):
        return _safe_logpost(model, data, th)

    return grad_fd(f, theta, cfg), hess_fd(f, theta, cfg)


def _solve_ascent(H_u: np.ndarray, g_u: np.ndarray):
    """Newton direction from (-H) d = g, ridged once if the factorization fails.

    Returns None when the curvature is indefinite even after the ridge (the
    caller then takes a gradient step, as away from the mode the posterior
    need not be concave).  Non-finite curvature raises, since no retry can
    recover it.
    """
    if not np.all(np.isfinite(H_u)):
        raise SingularHessianError(
            "Hessian contains non-finite entries; ridge retry cannot recover"
        )
    A = -H_u
    for attempt in range(2):
        try:
            L = np.linalg.cholesky(A)
        except np.linalg.LinAlgError:
            if attempt == 1:
                return None
            ridge = RIDGE_SCALE * max(np.trace(-H_u), 1.0) / H_u.shape[0]
            A = -H_u + ridge * np.eye(H_u.shape[0])
            continue
        z = np.linalg.solve(L, g_u)
        return np.linalg.solve(L.T, z)
    return None  # pragma: no cover


def posterior_mode(model, data: ObservationSet, init,
                   max_iter: int = 200,
                   tol_scale: float = MODE_TOL_SCALE,
                   cfg: DiffConfig = DEFAULT_DIFF) -> ModeResult:
    """Damped Newton ascent on the log unnormalized posterior from ``init``.

    Convergence requires the theta-space gradient inf-norm to fall below
    tol_scale * max(1, |logpost|) and the negative Hessian at the mode to be
    positive definite.  Hitting ``max_iter`` returns converged=False rather
    than raising.
    """
    model.validate_data(data)
    init = np.atleast_1d(np.asarray(init, dtype=float))
    if not model.in_support(init):
        raise ValidationError("init outside model support")
    tr = _Transform(model.p, getattr(model, "log_scale_coords", ()))
    u = tr.to_u(init)
    theta = tr.to_theta(u)
    fval = _safe_logpost(model, data, theta)
    if not np.isfinite(fval):
        raise ValidationError("log posterior not finite at init")

    iterations = 0
    grad_norm = np.inf
    for iterations in range(1, max_iter + 1):
        g_theta, H_theta = _theta_derivatives(model, data, theta, cfg)
        grad_norm = float(np.max(np.abs(g_theta)))
        if grad_norm <= tol_scale * max(1.0, abs(fval)):
            break
        g_u, H_u = tr.chain(theta, g_theta, H_theta)
        d = _solve_ascent(H_u, g_u)
        slope = float(g_u @ d) if d is not None else 0.0
        if d is None or slope <= 0.0:
            d = g_u
            slope = float(g_u @ g_u)
        alpha = 1.0
        improved = False
        while alpha > 1e-18:
            u_new = u + alpha * d
            f_new = _safe_logpost(model, data, tr.to_theta(u_new))
            if f_new >= fval + ARMIJO_C * alpha * slope:
                improved = True
                break
            alpha *= 0.5
        if not improved:
            break  # stalled; convergence judged by the gradient test below
        step = float(np.max(np.abs(alpha * d)))
        u = u_new
        theta = tr.to_theta(u)
        fval = f_new
        if step <= 1e-14 * max(1.0, float(np.max(np.abs(u)))):
            break  # below floating-point resolution; no further progress possible
    else:
        iterations = max_iter

    g_theta, H_theta = _theta_derivatives(model, data, theta, cfg)
    grad_norm = float(np.max(np.abs(g_theta)))
    neg_hess = 0.5 * ((-H_theta) + (-H_theta).T)
    grad_ok = grad_norm <= tol_scale * max(1.0, abs(fval))
    try:
        np.linalg.cholesky(neg_hess)
        pd_ok = True
    except np.linalg.LinAlgError:
        pd_ok = False
    return ModeResult(
        theta_hat=theta,
        grad_norm=grad_norm,
        iterations=iterations,
        converged=bool(grad_ok and pd_ok),
        neg_hessian=neg_hess,
        logpost=float(fval),
    )


def find_posterior_mode(model, data: ObservationSet, init=None,
                        restarts: int = 3, seed: int = 0,
                        max_iter: int = 200,
                        cfg: DiffConfig = DEFAULT_DIFF) -> ModeResult:
    """Best-of-restarts mode search from the data-driven init plus perturbations."""
    base = np.atleast_1d(np.asarray(
        model.default_init(data) if init is None else init, dtype=float))
    tr = _Transform(model.p, getattr(model, "log_scale_coords", ()))
    u0 = tr.to_u(base)
    rng = substream(seed, "mode-restarts")
    best = None
    best_converged = None
    for r in range(max(1, restarts)):
        u_start = u0 if r == 0 else u0 + 0.3 * rng.standard_normal(model.p)
        try:
            res = posterior_mode(model, data, tr.to_theta(u_start),
                                 max_iter=max_iter, cfg=cfg)
        except (ValidationError, NumericalError):
            continue
        if best is None or res.logpost > best.logpost:
            best = res
        if res.converged and (best_converged is None
                              or res.logpost > best_converged.logpost):
            best_converged = res
    # a stalled run can beat a converged one by a few ulps; prefer converged
    if best_converged is not None:
        return best_converged
    if best is None:
        raise NumericalError("all mode-search restarts failed")
    return best


def laplace_approx(model, data: ObservationSet, mode: ModeResult) -> LaplaceApprox:
    """Gaussian approximation with covariance (n * hess_info)^-1 at the mode.

    n * hess_info equals the negative Hessian of the log posterior already
    carried by the ModeResult, so the covariance is its SPD inverse.
    """
    if not mode.converged:
        raise ValidationError("laplace_approx needs a converged mode")
    A = mode.neg_hessian
    try:
        L = np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        raise NotPositiveDefiniteError(
            "negative Hessian at the mode is not positive definite",
            eigenvalues=np.linalg.eigvalsh(A),
        )
    Linv = np.linalg.solve(L, np.eye(A.shape[0]))
    cov = Linv.T @ Linv
    cov = 0.5 * (cov + cov.T)
    return LaplaceApprox(mean=mode.theta_hat.copy(), covariance=cov)
