"""Predictive model-selection criteria on the deviance scale.

Every report satisfies value = -2*fit + 2*penalty.  The criteria differ in
the fit term (posterior-averaged log likelihood vs. plug-in at the posterior
mode) and in how the penalty estimates the optimism from using the data for
both fitting and evaluation:

  paic   posterior-averaged fit, trace penalty tr{J^-1 I} with the 1/(n-1)
         score convention; defined for improper priors as well
  bpic   plug-in fit at the mode, prior-dependent correction with the 1/n
         score convention; refuses improper priors
  waic2  posterior-averaged fit, penalty = sum of per-observation posterior
         variances of the log likelihood
  loo    exact leave-one-out refits (no penalty term)
  popt   expected-deviance penalized loss, closed form for the normal model
  dic    plug-in fit at the posterior mean (reference criterion)

Per-observation bias comparisons in the experiments divide penalties by n.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import gammaln

from .exceptions import (
    ImproperPriorError,
    NumericalError,
    UnsupportedModelError,
    ValidationError,
)
from .infomat import InfoMatrixPair, trace_correction
from .mcmc import PosteriorDraws, SamplerBudget, sample_hier_logit
from .models import (
    LOG_2PI,
    ConjugateNormalModel,
    HierLogitModel,
    ObservationSet,
    conjugate_posterior,
    logpost_unnorm,
    softplus,
)
from .optimize import LaplaceApprox, ModeResult, find_posterior_mode, laplace_approx

MIN_DRAWS = 1000
LOO_MAX_N = 1000

_GH_NODES, _GH_WEIGHTS = np.polynomial.hermite.hermgauss(32)
_GH_WEIGHTS = _GH_WEIGHTS / math.sqrt(math.pi)


@dataclass(frozen=True)
class PointwiseLogLik:
    """S x n matrix of log g(y_i | theta^(s)) values."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", v)
        if v.ndim != 2:
            raise ValidationError("pointwise log-likelihood must be S x n")

    @property
    def S(self) -> int:
        return self.values.shape[0]

    @property
    def n(self) -> int:
        return self.values.shape[1]

    def column_means(self) -> np.ndarray:
        return self.values.mean(axis=0)

    def column_vars(self) -> np.ndarray:
        return self.values.var(axis=0, ddof=1)


@dataclass(frozen=True)
class CriterionReport:
    name: str
    value: float
    fit_term: float
    penalty: float
    n: int
    S: int
    notes: str = ""
    warnings: tuple = ()
    seed: Optional[int] = None


def _report(name, fit, penalty, n, S, notes="", warnings=()) -> CriterionReport:
    return CriterionReport(
        name=name,
        value=-2.0 * fit + 2.0 * penalty,
        fit_term=float(fit),
        penalty=float(penalty),
        n=int(n),
        S=int(S),
        notes=notes,
        warnings=tuple(warnings),
    )


def pointwise_loglik(model, data: ObservationSet, draws: PosteriorDraws) -> PointwiseLogLik:
    """Evaluate log g(y_i | theta^(s)) for every draw and observation."""
    model.validate_data(data)
    if draws.p != model.p:
        raise ValidationError("draw dimension does not match the model")
    mat = model.loglik_matrix(data, draws.draws)
    if not np.all(np.isfinite(mat)):
        s, i = np.argwhere(~np.isfinite(mat))[0]
        raise NumericalError(f"non-finite log likelihood at draw {s}, observation {i}")
    return PointwiseLogLik(mat)


def mean_insample_loglik(pointwise: PointwiseLogLik) -> float:
    """(1/n) sum_i E_draws[log g(y_i | theta)], the in-sample estimate."""
    return float(np.mean(pointwise.column_means()))


def _check_draws(S: int, min_draws: int):
    if S < min_draws:
        raise ValidationError(f"need at least {min_draws} draws, got {S}")


def paic(pointwise: PointwiseLogLik, info_pair: InfoMatrixPair,
         min_draws: int = MIN_DRAWS) -> CriterionReport:
    """Posterior-averaging criterion: -2 sum_i E[log g] + 2 tr{J^-1 I}."""
    _check_draws(pointwise.S, min_draws)
    if info_pair.score_denominator != "n-1":
        raise ValidationError("paic needs the 1/(n-1) score convention")
    penalty = trace_correction(info_pair).value
    fit = float(np.sum(pointwise.column_means()))
    return _report("paic", fit, penalty, pointwise.n, pointwise.S)


def bpic(model, data: ObservationSet, draws: PosteriorDraws, mode: ModeResult,
         info_pair: InfoMatrixPair, min_draws: int = MIN_DRAWS) -> CriterionReport:
    """Plug-in criterion: -2 log{pi L}(theta_hat) + 2 [E log pi + tr + p/2].

    The prior expectation is a draw average, so this refuses improper priors
    (their log density is only defined up to a constant).
    """
    if not model.prior_proper:
        raise ImproperPriorError("BPIC undefined under degenerate prior")
    _check_draws(draws.S, min_draws)
    if info_pair.score_denominator != "n":
        raise ValidationError("bpic needs the 1/n score convention")
    tr = trace_correction(info_pair).value
    e_logprior = float(np.mean(model.logprior_draws(draws.draws)))
    fit = logpost_unnorm(model, data, mode.theta_hat)
    penalty = e_logprior + tr + 0.5 * model.p
    return _report("bpic", fit, penalty, data.n, draws.S)


def waic2(pointwise: PointwiseLogLik, min_draws: int = 2) -> CriterionReport:
    """Posterior-variance penalty: p = sum_i Var_draws[log g(y_i | theta)]."""
    _check_draws(pointwise.S, max(2, min_draws))
    fit = float(np.sum(pointwise.column_means()))
    penalty = float(np.sum(pointwise.column_vars()))
    return _report("waic2", fit, penalty, pointwise.n, pointwise.S)


def dic(model, data: ObservationSet, draws: PosteriorDraws,
        min_draws: int = MIN_DRAWS) -> CriterionReport:
    """Deviance criterion at the posterior mean (reference only)."""
    _check_draws(draws.S, min_draws)
    theta_bar = draws.draws.mean(axis=0)
    if not model.in_support(theta_bar):
        raise NumericalError(
            "posterior-mean parameter lies outside the model support; "
            "consider reparameterization"
        )
    pw = pointwise_loglik(model, data, draws)
    loglik_bar = float(np.sum(model.loglik_terms(data, theta_bar)))
    mean_loglik = float(np.mean(pw.values.sum(axis=1)))
    p_d = 2.0 * (loglik_bar - mean_loglik)
    return _report("dic", loglik_bar, p_d, data.n, draws.S)


# -- closed forms for the conjugate normal model -------------------------


@dataclass(frozen=True)
class ClosedFormBias:
    """The five per-observation bias estimates for the conjugate normal model."""

    paic: float
    bpic: float
    waic2: float
    popt: float
    cv: float

    def as_dict(self) -> dict:
        return {
            "paic": self.paic,
            "bpic": self.bpic,
            "waic2": self.waic2,
            "popt": self.popt,
            "cv": self.cv,
        }


def _require_normal(model):
    if not isinstance(model, ConjugateNormalModel):
        raise UnsupportedModelError("closed forms exist only for the conjugate normal model")


def closed_form_insample_loglik(model: ConjugateNormalModel, data: ObservationSet) -> float:
    """Exact (1/n) sum_i E_post[log g(y_i | mu)] for the normal model."""
    _require_normal(model)
    mu_hat, s2 = conjugate_posterior(model, data)
    sA2 = model.sigma_A2
    rss = float(np.sum((data.y - mu_hat) ** 2))
    return -0.5 * (LOG_2PI + math.log(sA2)) - (rss / data.n + s2) / (2.0 * sA2)


def closed_form_bias_estimators(model: ConjugateNormalModel,
                                data: ObservationSet) -> ClosedFormBias:
    """Literal evaluation of the five per-observation bias formulas.

    waic2 is the total posterior-variance penalty divided by n; cv uses the
    exact leave-one-out posterior (mean mu_loo_i, variance s2_loo) in the
    refit estimate it subtracts from the in-sample value.
    """
    _require_normal(model)
    model.validate_data(data)
    y = data.y
    n = data.n
    sA2 = model.sigma_A2
    mu_hat, s2 = conjugate_posterior(model, data)

    scores = (y - mu_hat) / sA2
    if model.tau02 is not None:
        scores = scores + (model.mu0 - mu_hat) / (n * model.tau02)
    ssq = float(np.sum(scores ** 2))
    b_paic = s2 * ssq / (n - 1.0)
    b_bpic = s2 * ssq / n

    rss = float(np.sum((y - mu_hat) ** 2))
    b_waic2 = (s2 / sA2 ** 2) * (n * s2 / 2.0 + rss) / n

    inv_tau = 0.0 if model.tau02 is None else 1.0 / model.tau02
    s2_loo = 1.0 / (inv_tau + (n - 1.0) / sA2)
    b_popt = s2_loo / sA2

    prior_part = 0.0 if model.tau02 is None else model.mu0 / model.tau02
    total = float(np.sum(y))
    mu_loo = (prior_part + (total - y) / sA2) * s2_loo
    rss_loo = float(np.sum((y - mu_loo) ** 2))
    b_cv = ((rss_loo / n + s2_loo) - (rss / n + s2)) / (2.0 * sA2)

    return ClosedFormBias(b_paic, b_bpic, b_waic2, b_popt, b_cv)


def popt_closed_form(model: ConjugateNormalModel, data: ObservationSet) -> CriterionReport:
    """Expected-deviance penalized loss; total penalty is n times the
    per-observation value 1/(1/tau02 + (n-1)/sigma_A2)/sigma_A2."""
    _require_normal(model)
    model.validate_data(data)
    bias = closed_form_bias_estimators(model, data)
    fit = data.n * closed_form_insample_loglik(model, data)
    penalty = data.n * bias.popt
    return _report("popt", fit, penalty, data.n, 0,
                   notes="closed form; no draws used")


# -- exact leave-one-out ---------------------------------------------------


@dataclass(frozen=True)
class LooConfig:
    budget: SamplerBudget = SamplerBudget(chains=3, draws_per_chain=2000, warmup=1000)
    seed: int = 0


def _gh_mean_softplus(mu_draws: np.ndarray, sd_draws: np.ndarray) -> np.ndarray:
    """E[softplus(b)] for b ~ N(mu_s, sd_s^2), one value per draw (32-node GH)."""
    nodes = mu_draws[:, None] + math.sqrt(2.0) * sd_draws[:, None] * _GH_NODES[None, :]
    return softplus(nodes) @ _GH_WEIGHTS


def _loo_terms_normal(model: ConjugateNormalModel, data: ObservationSet) -> np.ndarray:
    y = data.y
    n = data.n
    sA2 = model.sigma_A2
    inv_tau = 0.0 if model.tau02 is None else 1.0 / model.tau02
    prior_part = 0.0 if model.tau02 is None else model.mu0 / model.tau02
    s2_loo = 1.0 / (inv_tau + (n - 1.0) / sA2)
    mu_loo = (prior_part + (np.sum(y) - y) / sA2) * s2_loo
    return -0.5 * (LOG_2PI + math.log(sA2)) - ((y - mu_loo) ** 2 + s2_loo) / (2.0 * sA2)


def _loo_terms_hier_logit(model: HierLogitModel, data: ObservationSet,
                          cfg: LooConfig, rng_path=()):
    """Refit without each group; the held-out logit is integrated against its
    conditional N(mu, tau2) by quadrature under every retained draw."""
    terms = np.empty(model.N)
    flagged = 0
    for i in range(model.N):
        sub_model = model.drop_group(i)
        keep = np.ones(model.N, dtype=bool)
        keep[i] = False
        sub_data = ObservationSet(data.y[keep], data.trial_sizes[keep])
        fold_ok = True
        mode = None
        try:
            mode = find_posterior_mode(sub_model, sub_data, seed=cfg.seed)
            lap = laplace_approx(sub_model, sub_data, mode)
        except (ValidationError, NumericalError):
            # stalled fold mode: start from the best point found (or the
            # data-driven init) with a crude diagonal spread, and flag it
            fold_ok = False
            if mode is not None:
                diag_h = np.clip(np.diag(mode.neg_hessian), 1e-2, None)
                lap = LaplaceApprox(mode.theta_hat, np.diag(1.0 / diag_h))
            else:
                init = sub_model.default_init(sub_data)
                lap = LaplaceApprox(init, np.diag(np.full(sub_model.p, 0.25)))
        draws, diag = sample_hier_logit(
            sub_model, sub_data, budget=cfg.budget, seed=cfg.seed,
            rng_path=(*rng_path, "loo-fold", i), init=lap, check=False,
        )
        if not (diag.ok() and fold_ok):
            flagged += 1
        mu_d = draws.draws[:, sub_model.N]
        sd_d = np.sqrt(draws.draws[:, sub_model.N + 1])
        t_i = float(data.trial_sizes[i])
        y_i = float(data.y[i])
        coef = float(gammaln(t_i + 1.0) - gammaln(y_i + 1.0) - gammaln(t_i - y_i + 1.0))
        terms[i] = (
            coef
            + y_i * float(np.mean(mu_d))
            - t_i * float(np.mean(_gh_mean_softplus(mu_d, sd_d)))
        )
    return terms, flagged


def loo_exact(model, data: ObservationSet, sampler_config: Optional[LooConfig] = None,
              rng_path=()) -> CriterionReport:
    """Exact-refit leave-one-out: value = -2 sum_i E_post(-i)[log g(y_i | theta)].

    The normal model uses analytic fold posteriors; the hierarchical logit
    re-samples each fold.  Folds failing convergence diagnostics are flagged
    in the report, not dropped.
    """
    model.validate_data(data)
    if data.n > LOO_MAX_N:
        raise ValidationError(f"exact LOO guarded at n <= {LOO_MAX_N}")
    if isinstance(model, ConjugateNormalModel):
        terms = _loo_terms_normal(model, data)
        notes = "analytic fold posteriors"
        warnings_ = ()
        S = 0
    elif isinstance(model, HierLogitModel):
        cfg = sampler_config or LooConfig()
        terms, flagged = _loo_terms_hier_logit(model, data, cfg, rng_path)
        notes = "sampled fold posteriors"
        warnings_ = (
            (f"{flagged} fold(s) failed convergence diagnostics",) if flagged else ()
        )
        S = cfg.budget.chains * cfg.budget.draws_per_chain
    else:
        raise UnsupportedModelError("exact LOO implemented for the built-in models only")
    fit = float(np.sum(terms))
    return _report("loo", fit, 0.0, data.n, S, notes=notes, warnings=warnings_)
