"""Empirical information matrices and the trace penalty.

Both matrices are built from the prior-weighted per-observation terms
t_i(theta) = log g(y_i|theta) + (1/n) log pi(theta), evaluated at the
posterior mode:

    hess_info  = -(1/n) sum_i  d^2 t_i / dtheta dtheta'      (curvature)
    score_info = (1/d)  sum_i (dt_i/dtheta)(dt_i/dtheta)'    (score outer products)

where the denominator d is n-1 for the posterior-averaging penalty and n for
the plug-in (BPIC) convention; the two traces differ by exactly (n-1)/n.
Scores are not centered: at the mode their prior-weighted sum is already
(numerically) zero.  Adding a constant to log pi changes neither matrix.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigh

from .calculus import DEFAULT_DIFF, DiffConfig, grad_fd, hess_fd
from .exceptions import IllConditionedError, NumericalError, ValidationError
from .models import ObservationSet

COND_LIMIT = 1e12

_DENOMS = {"n-1": lambda n: n - 1.0, "n": lambda n: float(n)}


@dataclass(frozen=True)
class InfoMatrixPair:
    """Curvature / score-outer-product pair at the posterior mode.

    ``cond`` is the spectral condition number of the curvature matrix;
    computations refuse to proceed past COND_LIMIT.
    """

    hess_info: np.ndarray
    score_info: np.ndarray
    theta_hat: np.ndarray
    cond: float
    score_denominator: str = "n-1"


@dataclass(frozen=True)
class TraceCorrection:
    """tr{J^-1 I} with the generalized eigenvalues of (I, J) as diagnostics."""

    value: float
    eigenvalues: np.ndarray


def _term_function(model, data, i):
    def term(theta):
        return model.loglik_i(data, i, theta) + model.logprior(theta) / data.n

    return term


def compute_hess_info(model, data: ObservationSet, theta_hat,
                      cfg: DiffConfig = DEFAULT_DIFF) -> np.ndarray:
    """-(1/n) sum of per-term Hessians; analytic when the model provides them."""
    model.validate_data(data)
    theta_hat = np.atleast_1d(np.asarray(theta_hat, dtype=float))
    if getattr(model, "has_analytic_derivatives", False):
        H = model.hess_term_sum(data, theta_hat)
        if not np.all(np.isfinite(H)):
            raise NumericalError("non-finite analytic Hessian term sum")
    else:
        H = np.zeros((model.p, model.p))
        for i in range(data.n):
            Hi = hess_fd(_term_function(model, data, i), theta_hat, cfg)
            if not np.all(np.isfinite(Hi)):
                raise NumericalError(f"non-finite Hessian for observation {i}")
            H += Hi
    J = -H / data.n
    return 0.5 * (J + J.T)


def compute_score_info(model, data: ObservationSet, theta_hat,
                       denominator: str = "n-1",
                       cfg: DiffConfig = DEFAULT_DIFF) -> np.ndarray:
    """Sum of score outer products over observations, divided by n-1 (or n)."""
    if denominator not in _DENOMS:
        raise ValidationError("denominator must be 'n-1' or 'n'")
    model.validate_data(data)
    theta_hat = np.atleast_1d(np.asarray(theta_hat, dtype=float))
    if getattr(model, "has_analytic_derivatives", False):
        S = model.score_matrix(data, theta_hat)
        if not np.all(np.isfinite(S)):
            i = int(np.flatnonzero(~np.isfinite(S).all(axis=1))[0])
            raise NumericalError(f"non-finite score for observation {i}")
    else:
        rows = []
        for i in range(data.n):
            s = grad_fd(_term_function(model, data, i), theta_hat, cfg)
            if not np.all(np.isfinite(s)):
                raise NumericalError(f"non-finite score for observation {i}")
            rows.append(s)
        S = np.vstack(rows)
    I_mat = S.T @ S / _DENOMS[denominator](data.n)
    return 0.5 * (I_mat + I_mat.T)


def info_matrix_pair(model, data: ObservationSet, theta_hat,
                     convention: str = "paic",
                     cfg: DiffConfig = DEFAULT_DIFF) -> InfoMatrixPair:
    """Assemble the pair at theta_hat; 'paic' uses 1/(n-1), 'bpic' uses 1/n."""
    denom = {"paic": "n-1", "bpic": "n"}.get(convention)
    if denom is None:
        raise ValidationError("convention must be 'paic' or 'bpic'")
    J = compute_hess_info(model, data, theta_hat, cfg)
    I_mat = compute_score_info(model, data, theta_hat, denom, cfg)
    eig = np.linalg.eigvalsh(J)
    if eig[0] <= 0:
        cond = np.inf
    else:
        cond = float(eig[-1] / eig[0])
    return InfoMatrixPair(J, I_mat, np.atleast_1d(np.asarray(theta_hat, float)),
                          cond, denom)


def trace_correction(pair: InfoMatrixPair) -> TraceCorrection:
    """Solve J X = I by symmetric factorization and return tr(X).

    Nonnegative whenever J is positive definite at a proper mode (I is PSD
    by construction).  Refuses ill-conditioned J (cond > 1e12).
    """
    if not np.isfinite(pair.cond) or pair.cond > COND_LIMIT:
        raise IllConditionedError(
            f"curvature matrix condition number {pair.cond:.3e} exceeds {COND_LIMIT:.0e}",
            cond=pair.cond,
        )
    # generalized symmetric eigenproblem I v = lambda J v; tr(J^-1 I) = sum(lambda)
    lam = eigh(pair.score_info, pair.hess_info, eigvals_only=True)
    return TraceCorrection(float(np.sum(lam)), lam)
