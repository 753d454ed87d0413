"""Posterior samplers and convergence diagnostics.

The conjugate normal model is sampled exactly (iid draws from the analytic
posterior).  The hierarchical logit model uses Metropolis-within-Gibbs:
each group logit gets an adaptive random-walk Metropolis update (the group
conditionals are independent given the hyperparameters, so all groups move
in one vectorized step), while mu and tau2 have exact conjugate Gibbs
updates.  Step sizes adapt toward a 0.44 acceptance rate during warmup only;
the post-warmup kernel is frozen.

All randomness is pre-drawn per chain from Philox substreams keyed by
(seed, *path, "chain", c), so chains are reproducible regardless of how the
surrounding code schedules work.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .exceptions import NonConvergenceError, ValidationError
from .models import ConjugateNormalModel, HierLogitModel, ObservationSet, conjugate_posterior, softplus
from .optimize import LaplaceApprox, find_posterior_mode, laplace_approx
from .rng import substream

TARGET_ACCEPT = 0.44
ADAPT_BATCH = 50
RHAT_MAX = 1.05
ESS_MIN = 400.0


@dataclass(frozen=True)
class SamplerBudget:
    chains: int = 3
    draws_per_chain: int = 5000
    warmup: int = 2000

    def __post_init__(self):
        if self.chains < 1 or self.draws_per_chain < 1 or self.warmup < 0:
            raise ValidationError("invalid sampler budget")

    def scaled(self, factor: float) -> "SamplerBudget":
        return SamplerBudget(
            self.chains,
            int(np.ceil(self.draws_per_chain * factor)),
            int(np.ceil(self.warmup * factor)),
        )


@dataclass(frozen=True)
class PosteriorDraws:
    draws: np.ndarray
    chain_ids: np.ndarray
    warmup_discarded: int
    seed: int

    def __post_init__(self):
        d = np.asarray(self.draws, dtype=float)
        object.__setattr__(self, "draws", d)
        ids = np.asarray(self.chain_ids, dtype=int)
        object.__setattr__(self, "chain_ids", ids)
        if d.ndim != 2 or d.shape[0] < 1:
            raise ValidationError("draws must be a non-empty S x p matrix")
        if ids.shape != (d.shape[0],):
            raise ValidationError("chain_ids length must match draw count")

    @property
    def S(self) -> int:
        return self.draws.shape[0]

    @property
    def p(self) -> int:
        return self.draws.shape[1]

    def by_chain(self):
        for c in np.unique(self.chain_ids):
            yield c, self.draws[self.chain_ids == c]


@dataclass(frozen=True)
class Diagnostics:
    ess: np.ndarray
    rhat: np.ndarray
    accept_rate: np.ndarray
    step_scales_warmup_end: np.ndarray
    step_scales_final: np.ndarray

    @property
    def max_rhat(self) -> float:
        return float(np.max(self.rhat))

    @property
    def min_ess(self) -> float:
        return float(np.min(self.ess))

    def ok(self, rhat_max: float = RHAT_MAX, ess_min: float = ESS_MIN) -> bool:
        return self.max_rhat <= rhat_max and self.min_ess >= ess_min


def ess(x) -> float:
    """Effective sample size via the initial monotone sequence estimator.

    Pairwise autocorrelation sums Gamma_m = rho_{2m} + rho_{2m+1} are kept
    until the first non-positive one and forced monotone non-increasing; the
    integrated autocorrelation time is 2*sum(Gamma) - 1.  A constant series
    has no information: ESS is defined as 0 (with a warning).
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.size < 10:
        raise ValidationError("ess needs a 1-D series of at least 10 draws")
    n = x.size
    x = x - x.mean()
    var0 = float(x @ x) / n
    if var0 == 0.0:
        warnings.warn("constant series: ESS defined as 0")
        return 0.0
    nfft = 1 << int(2 * n - 1).bit_length()
    f = np.fft.rfft(x, nfft)
    acov = np.fft.irfft(f * np.conj(f), nfft)[:n] / n
    rho = acov / acov[0]
    m_max = n // 2
    gam = rho[0 : 2 * m_max : 2] + rho[1 : 2 * m_max : 2]
    nonpos = np.flatnonzero(gam <= 0.0)
    cut = int(nonpos[0]) if nonpos.size else m_max
    if cut == 0:
        return float(n)
    gam = np.minimum.accumulate(gam[:cut])
    tau = 2.0 * float(np.sum(gam)) - 1.0
    return n / max(tau, 1e-3)


def rhat(x, chain_ids) -> float:
    """Split-chain potential scale reduction for one coordinate.

    Each chain is split in half (a single chain is allowed: its halves act
    as two chains), so within-chain drift inflates the statistic.
    """
    x = np.asarray(x, dtype=float)
    ids = np.asarray(chain_ids)
    if x.shape != ids.shape:
        raise ValidationError("draws and chain_ids must align")
    lengths = {int(np.sum(ids == c)) for c in np.unique(ids)}
    if len(lengths) != 1:
        raise ValidationError("chains must have equal lengths")
    halves = []
    for c in np.unique(ids):
        ch = x[ids == c]
        half = ch.size // 2
        if half < 2:
            raise ValidationError("chains too short to split")
        halves.append(ch[:half])
        halves.append(ch[half : 2 * half])
    arr = np.vstack(halves)
    m, L = arr.shape
    means = arr.mean(axis=1)
    variances = arr.var(axis=1, ddof=1)
    W = float(np.mean(variances))
    B = L * float(np.var(means, ddof=1))
    if W == 0.0:
        return 1.0 if B == 0.0 else np.inf
    var_plus = (L - 1) / L * W + B / L
    return float(np.sqrt(var_plus / W))


def compute_diagnostics(draws: PosteriorDraws,
                        accept_rate=None,
                        scales_warm=None,
                        scales_final=None) -> Diagnostics:
    p = draws.p
    ess_vals = np.zeros(p)
    rhat_vals = np.zeros(p)
    for k in range(p):
        total = 0.0
        for _, chain in draws.by_chain():
            total += ess(chain[:, k])
        ess_vals[k] = min(total, float(draws.S))
        rhat_vals[k] = rhat(draws.draws[:, k], draws.chain_ids)
    empty = np.zeros(0)
    return Diagnostics(
        ess=ess_vals,
        rhat=rhat_vals,
        accept_rate=empty if accept_rate is None else np.asarray(accept_rate),
        step_scales_warmup_end=empty if scales_warm is None else np.asarray(scales_warm),
        step_scales_final=empty if scales_final is None else np.asarray(scales_final),
    )


def sample_conjugate_normal(model: ConjugateNormalModel, data: ObservationSet,
                            S: int, seed: int, rng_path=()) -> PosteriorDraws:
    """Exact iid draws from the analytic normal posterior."""
    if S < 1:
        raise ValidationError("S must be >= 1")
    mu_hat, sigma_hat2 = conjugate_posterior(model, data)
    gen = substream(seed, *rng_path, "conjugate")
    draws = mu_hat + np.sqrt(sigma_hat2) * gen.standard_normal(S)
    return PosteriorDraws(
        draws=draws.reshape(-1, 1),
        chain_ids=np.zeros(S, dtype=int),
        warmup_discarded=0,
        seed=seed,
    )


def _initial_states(model: HierLogitModel, lap: LaplaceApprox,
                    chains: int, seed: int, rng_path) -> Tuple[np.ndarray, np.ndarray]:
    """Overdispersed chain starts around the Laplace mean; tau2 stays positive."""
    N, p = model.N, model.p
    sd = lap.marginal_sd()
    states = np.empty((chains, p))
    for c in range(chains):
        z = substream(seed, *rng_path, "init", c).standard_normal(p)
        states[c, : N + 1] = lap.mean[: N + 1] + 2.0 * sd[: N + 1] * z[: N + 1]
        states[c, N + 1] = lap.mean[N + 1] * np.exp(0.5 * z[N + 1])
    scales = np.tile(2.4 * sd[:N], (chains, 1))
    return states, scales


def sample_hier_logit(model: HierLogitModel, data: ObservationSet,
                      budget: SamplerBudget = SamplerBudget(),
                      seed: int = 0, rng_path=(),
                      init: Optional[LaplaceApprox] = None,
                      target_accept: float = TARGET_ACCEPT,
                      adapt_batch: int = ADAPT_BATCH,
                      check: bool = True,
                      rhat_max: float = RHAT_MAX,
                      ess_min: float = ESS_MIN):
    """Adaptive Metropolis-within-Gibbs for the hierarchical logit posterior.

    Returns (PosteriorDraws, Diagnostics); with ``check=True`` raises
    NonConvergenceError (carrying the diagnostics) when any coordinate has
    rhat above ``rhat_max`` or ESS below ``ess_min`` -- callers may retry
    with a larger budget.
    """
    model.validate_data(data)
    N, p, C = model.N, model.p, budget.chains
    T = budget.warmup + budget.draws_per_chain
    y = data.y.astype(float)
    t = data.trial_sizes.astype(float)

    if init is None:
        mode = find_posterior_mode(model, data, seed=seed)
        init = laplace_approx(model, data, mode)
    beta_mu_tau, scales = _initial_states(model, init, C, seed, rng_path)
    beta = beta_mu_tau[:, :N].copy()
    mu = beta_mu_tau[:, N].copy()
    tau2 = np.maximum(beta_mu_tau[:, N + 1], 1e-8)

    # pre-drawn randomness, one substream per chain
    z_move = np.empty((T, C, N))
    log_u = np.empty((T, C, N))
    z_mu = np.empty((T, C))
    chi2 = np.empty((T, C))
    df = model.nu + N
    for c in range(C):
        gen = substream(seed, *rng_path, "chain", c)
        z_move[:, c, :] = gen.standard_normal((T, N))
        log_u[:, c, :] = np.log(gen.random((T, N)))
        z_mu[:, c] = gen.standard_normal(T)
        chi2[:, c] = gen.chisquare(df, T)

    sp_beta = softplus(beta)
    out = np.empty((C, budget.draws_per_chain, p))
    batch_acc = np.zeros((C, N))
    accept_total = np.zeros((C, N))
    scales_warm = scales.copy()
    warmup = budget.warmup
    nu_s2 = model.nu * model.s2
    inv_mu_var = 1.0 / model.mu_var
    prior_mean_term = model.mu_mean * inv_mu_var

    for it in range(T):
        prop = beta + scales * z_move[it]
        sp_prop = softplus(prop)
        dlp = (
            y * (prop - beta)
            - t * (sp_prop - sp_beta)
            - ((prop - mu[:, None]) ** 2 - (beta - mu[:, None]) ** 2)
            / (2.0 * tau2[:, None])
        )
        acc = log_u[it] < dlp
        beta = np.where(acc, prop, beta)
        sp_beta = np.where(acc, sp_prop, sp_beta)
        if it < warmup:
            batch_acc += acc
            if (it + 1) % adapt_batch == 0:
                m = (it + 1) // adapt_batch
                delta = min(0.25, m ** -0.5)
                scales = scales * np.exp(
                    np.where(batch_acc / adapt_batch > target_accept, delta, -delta)
                )
                batch_acc[:] = 0.0
            if it == warmup - 1:
                scales_warm = scales.copy()
        else:
            accept_total += acc
        v = 1.0 / (inv_mu_var + N / tau2)
        mu = v * (prior_mean_term + beta.sum(axis=1) / tau2) + np.sqrt(v) * z_mu[it]
        sse = ((beta - mu[:, None]) ** 2).sum(axis=1)
        tau2 = (nu_s2 + sse) / chi2[it]
        if it >= warmup:
            k = it - warmup
            out[:, k, :N] = beta
            out[:, k, N] = mu
            out[:, k, N + 1] = tau2

    draws = PosteriorDraws(
        draws=out.reshape(C * budget.draws_per_chain, p),
        chain_ids=np.repeat(np.arange(C), budget.draws_per_chain),
        warmup_discarded=warmup,
        seed=seed,
    )
    diag = compute_diagnostics(
        draws,
        accept_rate=accept_total.mean(axis=0) / budget.draws_per_chain,
        scales_warm=scales_warm,
        scales_final=scales,
    )
    if check and not diag.ok(rhat_max, ess_min):
        raise NonConvergenceError(
            f"sampler did not converge: max rhat {diag.max_rhat:.4f}, "
            f"min ess {diag.min_ess:.0f}",
            diagnostics=diag,
        )
    return draws, diag
