"""Model abstraction and built-in models.

A model exposes a per-observation log likelihood ``log g(y_i | theta)``, a log
prior ``log pi(theta)`` (possibly improper, represented only up to an additive
constant), and optionally analytic derivatives of the prior-weighted
per-observation term

    t_i(theta) = log g(y_i | theta) + (1/n) * log pi(theta).

The ``(1/n) log pi`` weighting is what makes prior curvature enter the
information matrices at the per-observation scale; for a flat prior the term
is identically zero.

Two built-ins cover the bundled simulation studies: a normal location model
with known variance and conjugate (or flat) normal prior, and a hierarchical
binomial-logit random-effects model.  User models are supplied
programmatically through :class:`ModelDefinition`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import expit, gammaln

from .exceptions import NumericalError, UnsupportedModelError, ValidationError

LOG_2PI = math.log(2.0 * math.pi)


def softplus(x):
    """log(1 + e^x), overflow-safe for large |x|."""
    return np.logaddexp(0.0, x)


def scaled_inv_chi2_logpdf(x, nu, s2):
    """Log density of the scaled inverse chi-squared distribution.

    Parameterized by degrees of freedom ``nu`` and scale ``s2``:
    p(x) ∝ x^-(nu/2 + 1) exp(-nu s2 / (2x)), x > 0.
    """
    half_nu = 0.5 * nu
    return (
        half_nu * math.log(half_nu)
        - gammaln(half_nu)
        + half_nu * np.log(s2)
        - (half_nu + 1.0) * np.log(x)
        - half_nu * s2 / x
    )


@dataclass(frozen=True)
class ObservationSet:
    """Observed data: a vector y and, for binomial data, per-unit trial counts.

    Requires n >= 2 (the score outer-product matrix carries a 1/(n-1)
    factor).  Binomial counts must be integers in [0, trial_sizes[i]].
    """

    y: np.ndarray
    trial_sizes: Optional[np.ndarray] = None

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        object.__setattr__(self, "y", y)
        if y.ndim != 1:
            raise ValidationError("y must be a 1-D vector")
        if y.size < 2:
            raise ValidationError("need at least 2 observations")
        if not np.all(np.isfinite(y)):
            raise ValidationError("y contains non-finite values")
        if self.trial_sizes is not None:
            t = np.asarray(self.trial_sizes, dtype=int)
            object.__setattr__(self, "trial_sizes", t)
            if t.shape != y.shape:
                raise ValidationError("trial_sizes length must match y")
            if np.any(t < 1):
                raise ValidationError("trial_sizes must be positive")
            if np.any(y != np.round(y)) or np.any(y < 0) or np.any(y > t):
                raise ValidationError("binomial y must be integers in [0, n_i]")

    @property
    def n(self) -> int:
        return self.y.size


def _as_theta(theta, p: int) -> np.ndarray:
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    if theta.shape != (p,):
        raise ValidationError(f"parameter vector must have length {p}, got {theta.shape}")
    if not np.all(np.isfinite(theta)):
        raise ValidationError("parameter vector contains non-finite entries")
    return theta


class _ModelBase:
    """Shared generic fallbacks; built-ins override with vectorized paths."""

    p: int
    prior_proper: bool
    # coordinates handled on the log scale by the optimizer (positivity)
    log_scale_coords: tuple = ()

    def support(self):
        """Per-coordinate open-interval bounds (lo, hi)."""
        return [(-np.inf, np.inf)] * self.p

    def in_support(self, theta) -> bool:
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        if theta.shape != (self.p,) or not np.all(np.isfinite(theta)):
            return False
        return all(lo < t < hi for t, (lo, hi) in zip(theta, self.support()))

    def validate_data(self, data: ObservationSet) -> None:
        pass

    # -- fallback vectorizations over observations / draws --------------

    def loglik_terms(self, data: ObservationSet, theta) -> np.ndarray:
        return np.array(
            [self.loglik_i(data, i, theta) for i in range(data.n)], dtype=float
        )

    def loglik_matrix(self, data: ObservationSet, draws: np.ndarray) -> np.ndarray:
        return np.vstack([self.loglik_terms(data, row) for row in draws])

    def logprior_draws(self, draws: np.ndarray) -> np.ndarray:
        return np.array([self.logprior(row) for row in draws], dtype=float)

    @property
    def has_analytic_derivatives(self) -> bool:
        return False

    def default_init(self, data: ObservationSet) -> np.ndarray:
        return np.zeros(self.p)


class ConjugateNormalModel(_ModelBase):
    """Normal location model g(y_i | mu) = N(mu, sigma_A2) with known variance.

    Prior on the mean is N(mu0, tau02), or flat (pi(mu) ∝ 1, represented as
    logprior ≡ 0 with ``prior_proper = False``) when ``tau02`` is None.  The
    posterior is available in closed form, which makes this model the oracle
    for the generic machinery.
    """

    p = 1

    def __init__(self, sigma_A2: float, mu0: float = 0.0, tau02: Optional[float] = 1e4):
        if sigma_A2 <= 0:
            raise ValidationError("sigma_A2 must be positive")
        if tau02 is not None and tau02 <= 0:
            raise ValidationError("tau02 must be positive (or None for a flat prior)")
        self.sigma_A2 = float(sigma_A2)
        self.mu0 = float(mu0)
        self.tau02 = None if tau02 is None else float(tau02)

    @classmethod
    def flat(cls, sigma_A2: float) -> "ConjugateNormalModel":
        return cls(sigma_A2, mu0=0.0, tau02=None)

    @property
    def prior_proper(self) -> bool:
        return self.tau02 is not None

    def validate_data(self, data: ObservationSet) -> None:
        if data.trial_sizes is not None:
            raise ValidationError("normal model takes continuous data without trial_sizes")

    def loglik_i(self, data: ObservationSet, i: int, theta) -> float:
        mu = _as_theta(theta, 1)[0]
        r = data.y[i] - mu
        return -0.5 * (LOG_2PI + math.log(self.sigma_A2)) - 0.5 * r * r / self.sigma_A2

    def loglik_terms(self, data: ObservationSet, theta) -> np.ndarray:
        mu = _as_theta(theta, 1)[0]
        r = data.y - mu
        return -0.5 * (LOG_2PI + math.log(self.sigma_A2)) - 0.5 * r * r / self.sigma_A2

    def loglik_matrix(self, data: ObservationSet, draws: np.ndarray) -> np.ndarray:
        mus = np.asarray(draws, dtype=float).reshape(-1, 1)
        r = data.y[None, :] - mus
        return -0.5 * (LOG_2PI + math.log(self.sigma_A2)) - 0.5 * r * r / self.sigma_A2

    def logprior(self, theta) -> float:
        mu = _as_theta(theta, 1)[0]
        if self.tau02 is None:
            return 0.0
        d = mu - self.mu0
        return -0.5 * (LOG_2PI + math.log(self.tau02)) - 0.5 * d * d / self.tau02

    def logprior_draws(self, draws: np.ndarray) -> np.ndarray:
        mus = np.asarray(draws, dtype=float).reshape(-1)
        if self.tau02 is None:
            return np.zeros(mus.size)
        d = mus - self.mu0
        return -0.5 * (LOG_2PI + math.log(self.tau02)) - 0.5 * d * d / self.tau02

    # -- analytic derivatives of t_i = log g_i + (1/n) log pi ----------

    @property
    def has_analytic_derivatives(self) -> bool:
        return True

    def term_grad(self, data: ObservationSet, i: int, theta) -> np.ndarray:
        mu = _as_theta(theta, 1)[0]
        g = (data.y[i] - mu) / self.sigma_A2
        if self.tau02 is not None:
            g += (self.mu0 - mu) / (data.n * self.tau02)
        return np.array([g])

    def term_hess(self, data: ObservationSet, i: int, theta) -> np.ndarray:
        h = -1.0 / self.sigma_A2
        if self.tau02 is not None:
            h -= 1.0 / (data.n * self.tau02)
        return np.array([[h]])

    def score_matrix(self, data: ObservationSet, theta) -> np.ndarray:
        mu = _as_theta(theta, 1)[0]
        s = (data.y - mu) / self.sigma_A2
        if self.tau02 is not None:
            s = s + (self.mu0 - mu) / (data.n * self.tau02)
        return s.reshape(-1, 1)

    def hess_term_sum(self, data: ObservationSet, theta) -> np.ndarray:
        return data.n * self.term_hess(data, 0, theta)

    def default_init(self, data: ObservationSet) -> np.ndarray:
        return np.array([float(np.mean(data.y))])


class HierLogitModel(_ModelBase):
    """Hierarchical binomial model with logit-normal random effects.

    Observations are counts y_i ~ Bin(n_i, logit^-1(beta_i)) with group logits
    beta_i ~ N(mu, tau2) and a proper hyperprior on (mu, tau2): normal on mu
    and scaled inverse chi-squared on tau2.  The parameter vector is
    theta = (beta_1, ..., beta_N, mu, tau2), p = N + 2; the random-effects
    layer belongs to the prior, so every per-observation likelihood term
    touches only its own beta_i.
    """

    def __init__(
        self,
        trial_sizes: Sequence[int],
        mu_mean: float = 0.0,
        mu_var: float = 1000.0 ** 2,
        nu: float = 0.1,
        s2: float = 10.0,
    ):
        t = np.asarray(trial_sizes, dtype=int)
        if t.ndim != 1 or t.size < 2 or np.any(t < 1):
            raise ValidationError("trial_sizes must be a vector of >=2 positive counts")
        if mu_var <= 0 or nu <= 0 or s2 <= 0:
            raise ValidationError("hyperprior parameters must be positive")
        self.trial_sizes = t
        self.mu_mean = float(mu_mean)
        self.mu_var = float(mu_var)
        self.nu = float(nu)
        self.s2 = float(s2)
        self._logC = gammaln(t + 1.0)  # completed per-observation below

    @property
    def N(self) -> int:
        return self.trial_sizes.size

    @property
    def p(self) -> int:
        return self.N + 2

    @property
    def prior_proper(self) -> bool:
        return True

    @property
    def log_scale_coords(self) -> tuple:
        return (self.p - 1,)

    def support(self):
        bounds = [(-np.inf, np.inf)] * (self.N + 1)
        bounds.append((0.0, np.inf))
        return bounds

    def validate_data(self, data: ObservationSet) -> None:
        if data.trial_sizes is None:
            raise ValidationError("hierarchical logit model needs trial_sizes")
        if data.n != self.N:
            raise ValidationError(
                f"model declares {self.N} groups but data has {data.n}"
            )
        if np.any(data.trial_sizes != self.trial_sizes):
            raise ValidationError("data trial_sizes disagree with the model")

    def split(self, theta):
        theta = _as_theta(theta, self.p)
        return theta[: self.N], theta[self.N], theta[self.N + 1]

    def _log_binom_coef(self, data: ObservationSet) -> np.ndarray:
        t = data.trial_sizes.astype(float)
        y = data.y
        return gammaln(t + 1.0) - gammaln(y + 1.0) - gammaln(t - y + 1.0)

    def loglik_i(self, data: ObservationSet, i: int, theta) -> float:
        beta, _, _ = self.split(theta)
        t = float(data.trial_sizes[i])
        y = float(data.y[i])
        coef = gammaln(t + 1.0) - gammaln(y + 1.0) - gammaln(t - y + 1.0)
        return coef + y * beta[i] - t * softplus(beta[i])

    def loglik_terms(self, data: ObservationSet, theta) -> np.ndarray:
        beta, _, _ = self.split(theta)
        t = data.trial_sizes.astype(float)
        return self._log_binom_coef(data) + data.y * beta - t * softplus(beta)

    def loglik_matrix(self, data: ObservationSet, draws: np.ndarray) -> np.ndarray:
        draws = np.asarray(draws, dtype=float)
        B = draws[:, : self.N]
        t = data.trial_sizes.astype(float)
        return (
            self._log_binom_coef(data)[None, :]
            + data.y[None, :] * B
            - t[None, :] * softplus(B)
        )

    def logprior(self, theta) -> float:
        beta, mu, tau2 = self.split(theta)
        if tau2 <= 0:
            return -np.inf
        d = beta - mu
        lp = -0.5 * self.N * (LOG_2PI + math.log(tau2)) - 0.5 * np.sum(d * d) / tau2
        dm = mu - self.mu_mean
        lp += -0.5 * (LOG_2PI + math.log(self.mu_var)) - 0.5 * dm * dm / self.mu_var
        lp += float(scaled_inv_chi2_logpdf(tau2, self.nu, self.s2))
        return float(lp)

    def logprior_draws(self, draws: np.ndarray) -> np.ndarray:
        draws = np.asarray(draws, dtype=float)
        B = draws[:, : self.N]
        mu = draws[:, self.N]
        tau2 = draws[:, self.N + 1]
        d = B - mu[:, None]
        lp = -0.5 * self.N * (LOG_2PI + np.log(tau2)) - 0.5 * np.sum(d * d, axis=1) / tau2
        dm = mu - self.mu_mean
        lp += -0.5 * (LOG_2PI + math.log(self.mu_var)) - 0.5 * dm * dm / self.mu_var
        lp += scaled_inv_chi2_logpdf(tau2, self.nu, self.s2)
        return lp

    # -- analytic derivatives -------------------------------------------

    @property
    def has_analytic_derivatives(self) -> bool:
        return True

    def _prior_grad(self, theta) -> np.ndarray:
        beta, mu, tau2 = self.split(theta)
        d = beta - mu
        g = np.empty(self.p)
        g[: self.N] = -d / tau2
        g[self.N] = np.sum(d) / tau2 - (mu - self.mu_mean) / self.mu_var
        g[self.N + 1] = (
            -0.5 * self.N / tau2
            + 0.5 * np.sum(d * d) / tau2 ** 2
            - (0.5 * self.nu + 1.0) / tau2
            + 0.5 * self.nu * self.s2 / tau2 ** 2
        )
        return g

    def _prior_hess(self, theta) -> np.ndarray:
        beta, mu, tau2 = self.split(theta)
        d = beta - mu
        N, p = self.N, self.p
        H = np.zeros((p, p))
        H[np.arange(N), np.arange(N)] = -1.0 / tau2
        H[: N, N] = H[N, :N] = 1.0 / tau2
        H[: N, N + 1] = H[N + 1, :N] = d / tau2 ** 2
        H[N, N] = -N / tau2 - 1.0 / self.mu_var
        H[N, N + 1] = H[N + 1, N] = -np.sum(d) / tau2 ** 2
        H[N + 1, N + 1] = (
            0.5 * N / tau2 ** 2
            - np.sum(d * d) / tau2 ** 3
            + (0.5 * self.nu + 1.0) / tau2 ** 2
            - self.nu * self.s2 / tau2 ** 3
        )
        return H

    def term_grad(self, data: ObservationSet, i: int, theta) -> np.ndarray:
        beta, _, _ = self.split(theta)
        g = self._prior_grad(theta) / data.n
        xi = expit(beta[i])
        g[i] += data.y[i] - data.trial_sizes[i] * xi
        return g

    def term_hess(self, data: ObservationSet, i: int, theta) -> np.ndarray:
        beta, _, _ = self.split(theta)
        H = self._prior_hess(theta) / data.n
        xi = expit(beta[i])
        H[i, i] += -data.trial_sizes[i] * xi * (1.0 - xi)
        return H

    def score_matrix(self, data: ObservationSet, theta) -> np.ndarray:
        beta, _, _ = self.split(theta)
        base = self._prior_grad(theta) / data.n
        S = np.tile(base, (data.n, 1))
        xi = expit(beta)
        S[np.arange(data.n), np.arange(data.n)] += data.y - data.trial_sizes * xi
        return S

    def hess_term_sum(self, data: ObservationSet, theta) -> np.ndarray:
        beta, _, _ = self.split(theta)
        H = self._prior_hess(theta).copy()
        xi = expit(beta)
        H[np.arange(self.N), np.arange(self.N)] += -data.trial_sizes * xi * (1.0 - xi)
        return H

    def default_init(self, data: ObservationSet) -> np.ndarray:
        # empirical logits with a continuity correction keep 0 and n_i counts finite
        t = data.trial_sizes.astype(float)
        b = np.log((data.y + 0.5) / (t - data.y + 0.5))
        theta = np.empty(self.p)
        theta[: self.N] = b
        theta[self.N] = np.mean(b)
        theta[self.N + 1] = max(float(np.var(b)), 0.1)
        return theta

    def drop_group(self, i: int) -> "HierLogitModel":
        """Model with group i removed; hyperpriors unchanged (for LOO refits)."""
        keep = np.ones(self.N, dtype=bool)
        keep[i] = False
        return HierLogitModel(
            self.trial_sizes[keep], self.mu_mean, self.mu_var, self.nu, self.s2
        )


@dataclass
class ModelDefinition(_ModelBase):
    """Programmatic user model.

    ``loglik_i(theta, i, data)`` returns log g(y_i | theta); ``logprior``
    may be improper (then set ``prior_proper=False`` and criteria that need
    a proper prior will refuse).  ``analytic_grad``/``analytic_hess``, when
    given, differentiate the prior-weighted per-observation term and are
    verified against finite differences by ``calculus.check_gradient``.
    """

    p: int
    loglik_i_fn: Callable[[np.ndarray, int, ObservationSet], float]
    logprior_fn: Callable[[np.ndarray], float]
    prior_proper: bool = True
    analytic_grad: Optional[Callable[[np.ndarray, int, ObservationSet], np.ndarray]] = None
    analytic_hess: Optional[Callable[[np.ndarray, int, ObservationSet], np.ndarray]] = None
    support_bounds: Optional[list] = None
    log_scale_coords: tuple = ()

    def support(self):
        if self.support_bounds is None:
            return [(-np.inf, np.inf)] * self.p
        return list(self.support_bounds)

    def loglik_i(self, data: ObservationSet, i: int, theta) -> float:
        return float(self.loglik_i_fn(_as_theta(theta, self.p), i, data))

    def logprior(self, theta) -> float:
        return float(self.logprior_fn(_as_theta(theta, self.p)))

    @property
    def has_analytic_derivatives(self) -> bool:
        return self.analytic_grad is not None and self.analytic_hess is not None

    def term_grad(self, data: ObservationSet, i: int, theta) -> np.ndarray:
        if self.analytic_grad is None:
            raise ValidationError("model has no analytic_grad")
        return np.asarray(self.analytic_grad(_as_theta(theta, self.p), i, data), dtype=float)

    def term_hess(self, data: ObservationSet, i: int, theta) -> np.ndarray:
        if self.analytic_hess is None:
            raise ValidationError("model has no analytic_hess")
        return np.asarray(self.analytic_hess(_as_theta(theta, self.p), i, data), dtype=float)

    def score_matrix(self, data: ObservationSet, theta) -> np.ndarray:
        return np.vstack([self.term_grad(data, i, theta) for i in range(data.n)])

    def hess_term_sum(self, data: ObservationSet, theta) -> np.ndarray:
        H = np.zeros((self.p, self.p))
        for i in range(data.n):
            H += self.term_hess(data, i, theta)
        return H


# -- module-level operations -------------------------------------------


def loglik_total(model, data: ObservationSet, theta) -> float:
    """Total log likelihood sum_i log g(y_i | theta)."""
    model.validate_data(data)
    terms = model.loglik_terms(data, theta)
    if not np.all(np.isfinite(terms)):
        i = int(np.flatnonzero(~np.isfinite(terms))[0])
        raise NumericalError(f"non-finite log-likelihood term at observation {i}")
    return float(np.sum(terms))


def logpost_unnorm(model, data: ObservationSet, theta) -> float:
    """Log unnormalized posterior log{L(theta|y) pi(theta)}."""
    return loglik_total(model, data, theta) + float(model.logprior(theta))


def conjugate_posterior(model: ConjugateNormalModel, data: ObservationSet):
    """Exact posterior (mu_hat, sigma_hat2) of the conjugate normal model.

    mu_hat  = (mu0/tau02 + sum(y)/sigma_A2) / (1/tau02 + n/sigma_A2)
    sigma_hat2 = 1 / (1/tau02 + n/sigma_A2)

    With a flat prior the 1/tau02 terms vanish: mu_hat = mean(y),
    sigma_hat2 = sigma_A2/n.
    """
    if not isinstance(model, ConjugateNormalModel):
        raise UnsupportedModelError("conjugate_posterior needs a ConjugateNormalModel")
    model.validate_data(data)
    inv_tau = 0.0 if model.tau02 is None else 1.0 / model.tau02
    prior_part = 0.0 if model.tau02 is None else model.mu0 / model.tau02
    precision = inv_tau + data.n / model.sigma_A2
    sigma_hat2 = 1.0 / precision
    mu_hat = (prior_part + np.sum(data.y) / model.sigma_A2) * sigma_hat2
    return float(mu_hat), float(sigma_hat2)
