"""Hierarchical SIR model across units with a change in R0 and latent removals.

Each unit ``p`` follows an SIR process with ``R0 = r0_p`` before ``t0`` and
``r0_p * delta_p`` from ``t0`` on, so ``beta = R0 * gamma / N``.  The log
parameters ``(log r0_p, log delta_p, log gamma_p)`` are Normal around shared
means ``M`` with variances ``Sigma``, which carry Normal and InverseGamma
hyperpriors.  Only susceptible counts (equivalently cumulative infections)
are observed after the first time point; cumulative removals are latent and
drawn exactly from their full conditionals.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import EmptySupport, EpibirthError, InvalidParam
from .laplace import InversionConfig
from .likelihood import ObservationSeries, backward_kernel, interval_kernel, loglik
from .models import builtin_model
from .samplers import ChainOutput, effective_sample_size

UNIT_PARAMS = ("r0", "delta", "gamma")


@dataclass(frozen=True)
class HierConfig:
    t0: float
    iterations: int = 2000
    burn_in: int = 500
    seed: int = 0
    thinning: int = 1
    proposal_scale: tuple = (0.1, 0.1, 0.1)
    unit_steps: int = 1
    mu_prior_sd: float = 10.0
    ig_shape: float = 1e-3
    ig_scale: float = 1e-3
    update_hyper: bool = True
    init_mu: tuple = (0.0, 0.0, 0.0)
    init_sigma2: tuple = (1.0, 1.0, 1.0)
    threads: int = 1

    def __post_init__(self):
        if self.iterations < 1 or not 0 <= self.burn_in < self.iterations:
            raise InvalidParam("need 0 <= burn_in < iterations")
        if self.thinning < 1 or self.unit_steps < 1 or self.threads < 1:
            raise InvalidParam("thinning, unit_steps and threads must be positive")
        if len(self.proposal_scale) != 3 or min(self.proposal_scale) <= 0:
            raise InvalidParam("proposal_scale needs three positive entries")
        if self.mu_prior_sd <= 0 or self.ig_shape <= 0 or self.ig_scale <= 0:
            raise InvalidParam("hyperprior parameters must be positive")
        if min(self.init_sigma2) <= 0:
            raise InvalidParam("initial variances must be positive")


@dataclass
class HierarchicalState:
    theta: np.ndarray  # (P, 3) log r0, log delta, log gamma
    removals: list  # per unit: cumulative R at each observation time
    mu: np.ndarray
    sigma2: np.ndarray


def unit_model(theta, population: int, t0: float):
    """SIR model for one unit with its R0 change at ``t0``."""
    r0, delta, gamma = np.exp(theta)
    base = builtin_model("sir", beta=r0 * gamma / population, gamma=gamma)
    return replace(base, change_points=((float(t0), {"beta": r0 * delta * gamma / population}),))


def _check_units(units, t0):
    for p, s in enumerate(units):
        if s.labels != ("S", "I", "R"):
            raise InvalidParam(f"unit {p}: expected columns S, I, R")
        if s.total is None:
            raise InvalidParam(f"unit {p}: population total is required")
        if np.isnan(s.counts[0]).any():
            raise InvalidParam(f"unit {p}: the first row must be fully observed")
        if np.isnan(s.counts[:, 0]).any():
            raise InvalidParam(f"unit {p}: susceptible counts must be observed at every time")
        if not s.times[0] <= t0 <= s.times[-1]:
            raise InvalidParam(f"unit {p}: change point {t0} lies outside the observation window")
        if not np.any(np.isclose(s.times, t0, rtol=0, atol=1e-12)):
            raise InvalidParam(f"unit {p}: change point {t0} must coincide with an observation time")


class _Unit:
    """Data and latent bookkeeping for one unit."""

    def __init__(self, series: ObservationSeries, t0: float, cfg: InversionConfig):
        self.series = series
        self.t0 = t0
        self.cfg = cfg
        self.N = int(series.total)
        self.times = series.times
        self.S = series.counts[:, 0].astype(np.int64)
        self.r_obs = ~np.isnan(series.counts[:, 2])
        self.i_obs = ~np.isnan(series.counts[:, 1])

    @property
    def cumulative(self):
        return self.N - self.S

    def states(self, R):
        R = np.asarray(R, dtype=np.int64)
        return np.column_stack([self.S, self.N - self.S - R, R])

    def initial_removals(self):
        """Deterministic proportional allocation: a fraction 1 - exp(-dt) of the
        infectious leave per interval, respecting observed values."""
        n = self.times.size
        R = np.zeros(n, dtype=np.int64)
        R[0] = int(self.series.counts[0, 2])
        C = self.cumulative
        for j in range(1, n):
            if self.r_obs[j]:
                R[j] = int(self.series.counts[j, 2])
            elif self.i_obs[j]:
                R[j] = C[j] - int(self.series.counts[j, 1])
            else:
                infectious = C[j - 1] - R[j - 1]
                frac = 1.0 - math.exp(-(self.times[j] - self.times[j - 1]))
                R[j] = min(R[j - 1] + int(math.floor(frac * infectious)), C[j])
        # Never exceed a later observed value.
        for j in range(n - 2, -1, -1):
            if not (self.r_obs[j] or self.i_obs[j]):
                R[j] = min(R[j], R[j + 1])
        return R

    def loglik(self, theta, R) -> float:
        model = unit_model(theta, self.N, self.t0)
        ser = ObservationSeries(self.times, self.states(R).astype(float), ("S", "I", "R"), self.N)
        try:
            return loglik(model, ser, self.cfg).loglik
        except EpibirthError:
            return -math.inf

    def conditional(self, theta, R, j):
        """Support and probabilities of R[j] given its neighbours and parameters."""
        model = unit_model(theta, self.N, self.t0)
        prev = self.states(R)[j - 1]
        dt = self.times[j] - self.times[j - 1]
        fwd = interval_kernel(
            model, prev, [self.S[j], np.nan, np.nan], dt, self.cfg, model.params_at(self.times[j - 1])
        )
        C = self.cumulative[j]
        hi = C if j == len(R) - 1 else min(C, R[j + 1])
        support = np.arange(R[j - 1], hi + 1)
        w = np.array([fwd.get((int(self.S[j]), int(C - r), int(r)), 0.0) for r in support])
        if j < len(R) - 1:
            nxt = self.states(R)[j + 1]
            sources = np.column_stack([np.full(support.size, self.S[j]), C - support, support])
            back = backward_kernel(
                model, sources, nxt, self.times[j + 1] - self.times[j], self.cfg, model.params_at(self.times[j])
            )
            w = w * back
        w = np.clip(w, 0.0, None)
        total = w.sum()
        if not total > 0:
            raise EmptySupport(f"no feasible removal count at time {self.times[j]}")
        return support, w / total

    def update_latent(self, theta, R, rng):
        R = R.copy()
        for j in range(1, len(R)):
            if self.r_obs[j] or self.i_obs[j]:
                continue
            support, probs = self.conditional(theta, R, j)
            R[j] = support[rng.choice(support.size, p=probs)]
        return R


def _log_normal_prior(theta, mu, sigma2):
    z = theta - mu
    return float(-0.5 * np.sum(z * z / sigma2 + np.log(2 * math.pi * sigma2)))


def _unit_sweep(unit: _Unit, theta, R, mu, sigma2, scale, steps, rng):
    R = unit.update_latent(theta, R, rng)
    ll = unit.loglik(theta, R)
    lp = ll + _log_normal_prior(theta, mu, sigma2)
    accepted = 0
    for _ in range(steps):
        cand = theta + scale * rng.standard_normal(3)
        ll_c = unit.loglik(cand, R)
        lp_c = ll_c + _log_normal_prior(cand, mu, sigma2)
        if math.log(rng.random()) < lp_c - lp:
            theta, lp, ll = cand, lp_c, ll_c
            accepted += 1
    return theta, R, accepted


# Variances above this are stored as this; keeps 2 pi sigma^2 finite.
SIGMA2_CAP = float(np.finfo(float).max) / 16


def _log_gamma_variate(shape, rng):
    """log of a Gamma(shape, 1) draw, safe for tiny shapes where the draw underflows."""
    if shape >= 1.0:
        return math.log(rng.gamma(shape))
    return math.log(rng.gamma(shape + 1.0)) + math.log(rng.random()) / shape


def update_hyperparameters(theta, mu, sigma2, rng, mu_prior_sd=10.0, ig_shape=1e-3, ig_scale=1e-3):
    """One conjugate Gibbs pass: each mean given its variance, then each variance given its mean."""
    theta = np.asarray(theta, dtype=float).reshape(-1, len(mu))
    P = theta.shape[0]
    mu = np.array(mu, dtype=float)
    sigma2 = np.array(sigma2, dtype=float)
    for c in range(mu.size):
        prec = P / sigma2[c] + 1.0 / mu_prior_sd**2
        mean = (theta[:, c].sum() / sigma2[c]) / prec
        mu[c] = mean + rng.standard_normal() / math.sqrt(prec)
        shape = ig_shape + 0.5 * P
        rate = ig_scale + 0.5 * float(np.sum((theta[:, c] - mu[c]) ** 2))
        log_s2 = math.log(rate) - _log_gamma_variate(shape, rng)
        sigma2[c] = min(math.exp(min(log_s2, 709.0)), SIGMA2_CAP)
    return mu, sigma2


def _names(P):
    names = [f"{k}[{p}]" for p in range(P) for k in UNIT_PARAMS]
    names += [f"mu_{k}" for k in UNIT_PARAMS] + [f"sigma2_{k}" for k in UNIT_PARAMS]
    return tuple(names)


def hierarchical_gibbs(units, cfg: HierConfig, inversion: InversionConfig | None = None):
    """Metropolis-within-Gibbs over latent removals, unit parameters and hyperparameters.

    Returns a :class:`ChainOutput` whose columns are the unit log parameters
    followed by the hypermeans and hypervariances.  ``extras`` holds
    posterior-mean removal paths, per-unit acceptance and ``P(delta_p < 1)``.
    Unit updates use independent random streams, so results do not depend
    on ``cfg.threads``.
    """
    inversion = inversion or InversionConfig()
    units = list(units)
    _check_units(units, cfg.t0)
    P = len(units)
    data = [_Unit(s, cfg.t0, inversion) for s in units]
    seeds = np.random.SeedSequence(cfg.seed).spawn(P + 1)
    unit_rngs = [np.random.default_rng(s) for s in seeds[:P]]
    hyper_rng = np.random.default_rng(seeds[P])
    state = HierarchicalState(
        theta=np.tile(np.asarray(cfg.init_mu, dtype=float), (P, 1)),
        removals=[u.initial_removals() for u in data],
        mu=np.asarray(cfg.init_mu, dtype=float),
        sigma2=np.asarray(cfg.init_sigma2, dtype=float),
    )
    for p, u in enumerate(data):
        if not math.isfinite(u.loglik(state.theta[p], state.removals[p])):
            raise EmptySupport(f"unit {p}: initial latent removals are infeasible")
    scale = np.asarray(cfg.proposal_scale, dtype=float)
    kept = []
    latent_sum = [np.zeros(u.times.size) for u in data]
    acc = np.zeros(P)
    pool = ThreadPoolExecutor(cfg.threads) if cfg.threads > 1 and P > 1 else None

    def work(p):
        return _unit_sweep(
            data[p], state.theta[p], state.removals[p], state.mu, state.sigma2,
            scale, cfg.unit_steps, unit_rngs[p],
        )

    try:
        for it in range(cfg.iterations):
            results = list(pool.map(work, range(P))) if pool else [work(p) for p in range(P)]
            for p, (th, R, a) in enumerate(results):
                state.theta[p] = th
                state.removals[p] = R
                if it >= cfg.burn_in:
                    acc[p] += a
            if cfg.update_hyper:
                state.mu, state.sigma2 = update_hyperparameters(
                    state.theta, state.mu, state.sigma2, hyper_rng,
                    cfg.mu_prior_sd, cfg.ig_shape, cfg.ig_scale,
                )
            if it >= cfg.burn_in and (it - cfg.burn_in) % cfg.thinning == 0:
                kept.append(np.concatenate([state.theta.ravel(), state.mu, state.sigma2]))
                for p in range(P):
                    latent_sum[p] += state.removals[p]
    finally:
        if pool:
            pool.shutdown()
    draws = np.array(kept).reshape(len(kept), -1)
    n_post = cfg.iterations - cfg.burn_in
    unit_acc = acc / (n_post * cfg.unit_steps)
    names = _names(P)
    log_scale = tuple([True] * 3 * P + [False] * 6)
    out = ChainOutput(
        draws,
        names,
        float(unit_acc.mean()) if P else 1.0,
        cfg.seed,
        ess=effective_sample_size(draws) if len(draws) else np.zeros(len(names)),
        log_scale=log_scale,
    )
    out.extras["unit_acceptance"] = unit_acc
    out.extras["latent_mean"] = [s / max(len(kept), 1) for s in latent_sum]
    out.extras["prob_delta_below_one"] = np.array(
        [float(np.mean(draws[:, 3 * p + 1] < 0)) for p in range(P)]
    )
    out.extras["times"] = [u.times for u in data]
    out.extras["t0"] = cfg.t0
    return out


def r0_paths(chain: ChainOutput) -> list:
    """Posterior-mean R0 at each observation time, per unit."""
    P = len(chain.extras["times"])
    t0 = chain.extras["t0"]
    paths = []
    for p in range(P):
        lr = chain.draws[:, 3 * p]
        ld = chain.draws[:, 3 * p + 1]
        before = float(np.mean(np.exp(lr)))
        after = float(np.mean(np.exp(lr + ld)))
        times = chain.extras["times"][p]
        paths.append((times, np.where(times >= t0, after, before)))
    return paths
