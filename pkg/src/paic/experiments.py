"""Replication studies: bias-estimator calibration for the two built-in models.

The normal study draws y ~ N(mu_T, sigma_T2), analyzes it with the (possibly
misspecified) fixed-variance normal model, and compares five closed-form
per-observation bias estimates -- plus the generic info-matrix penalties as a
cross-check -- against the known true bias sigma_T2 * sigma_hat2 / sigma_A2^2.

The logit study simulates group logits from N(mu_true, tau_true^2), counts
from the matching binomials, fits the hierarchical model by MCMC, and scores
four bias estimates against the true out-of-sample value.  The out-of-sample
average log likelihood is computed exactly by summing over each group's
finite support (the default), or by fresh binomial sampling behind a flag.

Everything is driven by Philox substreams keyed on (seed, cell, replication),
so results are bit-identical for a given (config, seed) no matter how many
workers run the replications.
"""

from __future__ import annotations

import dataclasses
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import expit, gammaln

from .criteria import (
    LooConfig,
    closed_form_bias_estimators,
    loo_exact,
    pointwise_loglik,
)
from .exceptions import ExperimentError, NumericalError, PaicError, ValidationError
from .infomat import info_matrix_pair, trace_correction
from .mcmc import SamplerBudget, PosteriorDraws, sample_hier_logit
from .models import ConjugateNormalModel, HierLogitModel, ObservationSet, softplus
from .optimize import find_posterior_mode, laplace_approx, posterior_mode
from .rng import substream

TAU02_RULES = ("1e4", "1e4_over_n", "0.25", "flat")

NORMAL_ESTIMATORS = ("paic", "bpic", "waic2", "popt", "cv",
                     "paic_generic", "bpic_generic")
LOGIT_ESTIMATORS = ("paic", "bpic", "waic2", "cv")


@dataclass(frozen=True)
class NormalExperimentConfig:
    mu_T: float = 0.0
    sigma_T2: float = 1.0
    sigma_A2_grid: tuple = (1.0, 2.25, 0.25)
    tau02_rules: tuple = ("1e4",)
    mu0: float = 0.0
    n_grid: tuple = (25, 50, 100, 200)
    replications: int = 2000
    seed: int = 0

    def __post_init__(self):
        if self.sigma_T2 <= 0 or any(s <= 0 for s in self.sigma_A2_grid):
            raise ValidationError("variances must be positive")
        if self.replications < 1:
            raise ValidationError("replications must be >= 1")
        for rule in self.tau02_rules:
            resolve_tau02(rule, 10)  # raises on unknown rules


@dataclass(frozen=True)
class LogitExperimentConfig:
    N: int = 15
    n_i: int = 50
    mu_true: float = 0.0
    tau_true: float = 1.0
    replications: int = 100
    eta_draws: int = 20000
    budget: SamplerBudget = SamplerBudget(chains=3, draws_per_chain=5000, warmup=2000)
    fold_budget: SamplerBudget = SamplerBudget(chains=3, draws_per_chain=2000, warmup=1000)
    eta_oracle: str = "exact"
    seed: int = 0
    max_fail_frac: float = 0.05
    workers: int = 1
    mu_mean: float = 0.0
    mu_var: float = 1000.0 ** 2
    nu: float = 0.1
    s2: float = 10.0

    def __post_init__(self):
        if self.N < 2 or self.n_i < 1:
            raise ValidationError("need N >= 2 groups and n_i >= 1 trials")
        if self.eta_draws < 100:
            raise ValidationError("eta_draws must be >= 100")
        if self.eta_oracle not in ("exact", "sample"):
            raise ValidationError("eta_oracle must be 'exact' or 'sample'")
        if self.replications < 1:
            raise ValidationError("replications must be >= 1")


@dataclass
class CellResult:
    keys: dict
    records: dict
    aggregates: dict
    excluded: int = 0


@dataclass
class ExperimentResult:
    experiment: str
    config: dict
    seed: int
    cells: list


def resolve_tau02(rule: str, n: int) -> Optional[float]:
    """Prior-variance rule -> numeric value (None means the flat prior)."""
    if rule == "1e4":
        return 1e4
    if rule == "1e4_over_n":
        return 1e4 / n
    if rule == "0.25":
        return 0.25
    if rule == "flat":
        return None
    try:
        value = float(rule)
    except ValueError:
        raise ValidationError(f"unknown tau02 rule: {rule!r}")
    if value <= 0:
        raise ValidationError("tau02 must be positive")
    return value


def true_bias_normal(cfg: NormalExperimentConfig, n: int,
                     tau02: Optional[float], sigma_A2: float) -> float:
    """Exact expected optimism sigma_T2 * sigma_hat2 / sigma_A2^2."""
    inv_tau = 0.0 if tau02 is None else 1.0 / tau02
    sigma_hat2 = 1.0 / (inv_tau + n / sigma_A2)
    return cfg.sigma_T2 * sigma_hat2 / sigma_A2 ** 2


def _aggregate_vs_truth(values: np.ndarray, truth: float) -> dict:
    err = values - truth
    return {
        "mean": float(np.mean(values)),
        "sd": float(np.std(values, ddof=1)) if values.size > 1 else 0.0,
        "mean_abs_err": float(np.mean(np.abs(err))),
        "mean_sq_err": float(np.mean(err ** 2)),
    }


def aggregate_normal_cell(records: dict, true_bias: float) -> dict:
    return {
        est: _aggregate_vs_truth(np.asarray(records[f"b_{est}"]), true_bias)
        for est in NORMAL_ESTIMATORS
    }


def run_normal_bias_experiment(cfg: NormalExperimentConfig) -> ExperimentResult:
    """Five closed-form estimators plus the generic penalties, every cell."""
    cells = []
    for rule in cfg.tau02_rules:
        for sigma_A2 in cfg.sigma_A2_grid:
            for n in cfg.n_grid:
                tau02 = resolve_tau02(rule, n)
                model = ConjugateNormalModel(sigma_A2, cfg.mu0, tau02)
                b_true = true_bias_normal(cfg, n, tau02, sigma_A2)
                records = {f"b_{est}": np.empty(cfg.replications)
                           for est in NORMAL_ESTIMATORS}
                records["replication"] = np.arange(cfg.replications)
                for r in range(cfg.replications):
                    gen = substream(cfg.seed, "normal", rule, f"sA2={sigma_A2}", n, r)
                    y = cfg.mu_T + np.sqrt(cfg.sigma_T2) * gen.standard_normal(n)
                    data = ObservationSet(y)
                    cf = closed_form_bias_estimators(model, data)
                    mode = posterior_mode(model, data, model.default_init(data))
                    tr_paic = trace_correction(
                        info_matrix_pair(model, data, mode.theta_hat, "paic")).value
                    tr_bpic = trace_correction(
                        info_matrix_pair(model, data, mode.theta_hat, "bpic")).value
                    records["b_paic"][r] = cf.paic
                    records["b_bpic"][r] = cf.bpic
                    records["b_waic2"][r] = cf.waic2
                    records["b_popt"][r] = cf.popt
                    records["b_cv"][r] = cf.cv
                    records["b_paic_generic"][r] = tr_paic / n
                    records["b_bpic_generic"][r] = tr_bpic / n
                keys = {"n": n, "tau02_rule": rule, "sigma_A2": sigma_A2,
                        "true_bias": b_true}
                cells.append(CellResult(
                    keys=keys,
                    records=records,
                    aggregates=aggregate_normal_cell(records, b_true),
                ))
    return ExperimentResult(
        experiment="normal",
        config=dataclasses.asdict(cfg),
        seed=cfg.seed,
        cells=cells,
    )


# -- logit study -----------------------------------------------------------


@dataclass(frozen=True)
class EtaEstimate:
    value: float
    mc_se: float


def _log_binom_coef(n_i: float, z: np.ndarray) -> np.ndarray:
    return gammaln(n_i + 1.0) - gammaln(z + 1.0) - gammaln(n_i - z + 1.0)


def _posterior_loglik_profile(draws: PosteriorDraws, N: int):
    """Per-group posterior means of beta and softplus(beta).

    The binomial log pmf is linear in the count z given beta, so these two
    vectors determine mean_draws[log g(z | beta_i)] for every z at once.
    """
    B = draws.draws[:, :N]
    return B.mean(axis=0), softplus(B).mean(axis=0)


def true_predictive_loglik_exact(draws: PosteriorDraws, beta_true: np.ndarray,
                                 trial_sizes: np.ndarray) -> float:
    """(1/N) sum_i E_z[mean_draws log g(z | beta_i)] with z ~ Bin(n_i, true).

    The expectation over z is an exact finite sum over {0, ..., n_i}.
    """
    beta_true = np.asarray(beta_true, dtype=float)
    trial_sizes = np.asarray(trial_sizes)
    N = beta_true.size
    beta_bar, sp_bar = _posterior_loglik_profile(draws, N)
    total = 0.0
    for i in range(N):
        n_i = float(trial_sizes[i])
        z = np.arange(int(n_i) + 1, dtype=float)
        log_pmf_true = _log_binom_coef(n_i, z) + z * beta_true[i] \
            - n_i * softplus(beta_true[i])
        mean_loglik = _log_binom_coef(n_i, z) + z * beta_bar[i] - n_i * sp_bar[i]
        total += float(np.exp(log_pmf_true) @ mean_loglik)
    return total / N


def estimate_true_eta_logit(draws: PosteriorDraws, beta_true: np.ndarray,
                            cfg: LogitExperimentConfig,
                            rng: np.random.Generator) -> EtaEstimate:
    """Monte Carlo version of the oracle: J fresh counts per group."""
    beta_true = np.asarray(beta_true, dtype=float)
    N = beta_true.size
    trial_sizes = np.full(N, cfg.n_i)
    beta_bar, sp_bar = _posterior_loglik_profile(draws, N)
    J = cfg.eta_draws
    z = rng.binomial(trial_sizes[None, :], expit(beta_true)[None, :], size=(J, N))
    z = z.astype(float)
    vals = _log_binom_coef(trial_sizes.astype(float)[None, :], z) \
        + z * beta_bar[None, :] - trial_sizes[None, :] * sp_bar[None, :]
    value = float(np.mean(vals))
    group_vars = vals.var(axis=0, ddof=1)
    mc_se = float(np.sqrt(np.sum(group_vars) / J) / N)
    return EtaEstimate(value, mc_se)


_LOGIT_RECORD_FIELDS = (
    "replication", "eta_hat", "eta_true", "eta_mc_se",
    "b_paic", "b_bpic", "b_waic2", "b_cv",
    "err_paic", "err_bpic", "err_waic2", "err_cv",
    "max_rhat", "min_ess", "loo_flagged", "attempts",
)


def _logit_replication(cfg: LogitExperimentConfig, rep: int) -> Optional[dict]:
    """One replication; returns None when excluded after a doubled-budget retry."""
    trial_sizes = np.full(cfg.N, cfg.n_i)
    model = HierLogitModel(trial_sizes, cfg.mu_mean, cfg.mu_var, cfg.nu, cfg.s2)
    gen = substream(cfg.seed, "logit", rep, "truth")
    beta_true = cfg.mu_true + cfg.tau_true * gen.standard_normal(cfg.N)
    y = gen.binomial(trial_sizes, expit(beta_true))
    data = ObservationSet(y.astype(float), trial_sizes)

    draws = diag = mode = None
    attempts = 0
    for attempt in range(2):
        attempts = attempt + 1
        budget = cfg.budget if attempt == 0 else cfg.budget.scaled(2.0)
        try:
            mode = find_posterior_mode(model, data, seed=cfg.seed)
            lap = laplace_approx(model, data, mode)
            draws, diag = sample_hier_logit(
                model, data, budget=budget, seed=cfg.seed,
                rng_path=("logit", rep, "main", attempt), init=lap, check=True,
            )
            break
        except PaicError:
            # sampler gate, mode search, or Laplace failure: retry, then exclude
            draws = None
    if draws is None:
        return None

    pw = pointwise_loglik(model, data, draws)
    eta_hat = float(np.mean(pw.column_means()))
    tr_paic = trace_correction(
        info_matrix_pair(model, data, mode.theta_hat, "paic")).value
    tr_bpic = trace_correction(
        info_matrix_pair(model, data, mode.theta_hat, "bpic")).value
    b_paic = tr_paic / cfg.N
    logpost_draws = pw.values.sum(axis=1) + model.logprior_draws(draws.draws)
    b_bpic = (float(np.mean(logpost_draws)) - mode.logpost
              + tr_bpic + 0.5 * model.p) / cfg.N
    b_waic2 = float(np.sum(pw.column_vars())) / cfg.N

    loo = loo_exact(model, data, LooConfig(cfg.fold_budget, cfg.seed),
                    rng_path=("logit", rep))
    b_cv = eta_hat - loo.fit_term / cfg.N
    loo_flagged = 0
    if loo.warnings:
        loo_flagged = int(loo.warnings[0].split()[0])

    if cfg.eta_oracle == "exact":
        eta_true, eta_se = true_predictive_loglik_exact(draws, beta_true, trial_sizes), 0.0
    else:
        est = estimate_true_eta_logit(
            draws, beta_true, cfg, substream(cfg.seed, "logit", rep, "eta"))
        eta_true, eta_se = est.value, est.mc_se

    gap = eta_hat - eta_true
    return {
        "replication": rep,
        "eta_hat": eta_hat,
        "eta_true": eta_true,
        "eta_mc_se": eta_se,
        "b_paic": b_paic,
        "b_bpic": b_bpic,
        "b_waic2": b_waic2,
        "b_cv": b_cv,
        "err_paic": gap - b_paic,
        "err_bpic": gap - b_bpic,
        "err_waic2": gap - b_waic2,
        "err_cv": gap - b_cv,
        "max_rhat": diag.max_rhat,
        "min_ess": diag.min_ess,
        "loo_flagged": float(loo_flagged),
        "attempts": float(attempts),
    }


def aggregate_logit_cell(records: dict) -> dict:
    out = {}
    for est in LOGIT_ESTIMATORS:
        err = np.asarray(records[f"err_{est}"])
        out[est] = {
            "actual_err_mean": float(np.mean(err)),
            "actual_err_sd": float(np.std(err, ddof=1)) if err.size > 1 else 0.0,
            "abs_err_mean": float(np.mean(np.abs(err))),
            "abs_err_sd": float(np.std(np.abs(err), ddof=1)) if err.size > 1 else 0.0,
            "sq_err_mean": float(np.mean(err ** 2)),
            "sq_err_sd": float(np.std(err ** 2, ddof=1)) if err.size > 1 else 0.0,
        }
    return out


def run_logit_experiment(cfg: LogitExperimentConfig) -> ExperimentResult:
    """Replicated study of the four bias estimators for the logit model.

    Replications whose sampler fails the convergence gate even after one
    doubled-budget retry are excluded; more than ``max_fail_frac`` of them
    aborts the study.
    """
    reps = range(cfg.replications)
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_logit_replication, [cfg] * cfg.replications, reps))
    else:
        results = [_logit_replication(cfg, rep) for rep in reps]

    kept = [r for r in results if r is not None]
    excluded = cfg.replications - len(kept)
    if excluded > cfg.max_fail_frac * cfg.replications:
        raise ExperimentError(
            f"{excluded}/{cfg.replications} replications failed the sampler gate"
        )
    if not kept:
        raise ExperimentError("no replications survived")
    records = {
        name: np.array([r[name] for r in kept], dtype=float)
        for name in _LOGIT_RECORD_FIELDS
    }
    cell = CellResult(
        keys={"N": cfg.N, "n_i": cfg.n_i, "eta_oracle": cfg.eta_oracle},
        records=records,
        aggregates=aggregate_logit_cell(records),
        excluded=excluded,
    )
    config = dataclasses.asdict(cfg)
    config.pop("workers")  # execution detail; results do not depend on it
    return ExperimentResult(
        experiment="logit",
        config=config,
        seed=cfg.seed,
        cells=[cell],
    )
