"""Markov chain Monte Carlo on log-scale rate parameters.

Targets are plain callables.  HMC expects ``target(q) -> (log density,
gradient)``; random-walk Metropolis only needs ``target(q) -> log density``
(a tuple is accepted and its first entry used).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import optimize

from .errors import BadInit, EpibirthError, InvalidParam
from .laplace import InversionConfig
from .likelihood import ObservationSeries, loglik
from .models import CompartmentalModel

DIVERGENCE_THRESHOLD = 1000.0


# ------------------------------------------------------------------ targets


class PosteriorTarget:
    """Log posterior of log parameters under independent Normal priors.

    Parameters not listed in ``names`` stay at their model values.  Numerical
    failures in the likelihood (non-convergence, overflow, underflow) count as
    zero density so that samplers simply reject such points.
    """

    def __init__(
        self,
        model: CompartmentalModel,
        series: ObservationSeries,
        names: Sequence[str] | None = None,
        prior_mean=0.0,
        prior_sd=100.0,
        cfg: InversionConfig | None = None,
    ):
        self.model = model
        self.series = series
        self.names = tuple(names or model.param_names)
        unknown = [n for n in self.names if n not in model.params]
        if unknown:
            raise InvalidParam(f"unknown parameters {unknown}")
        k = len(self.names)
        self.prior_mean = np.broadcast_to(np.asarray(prior_mean, dtype=float), (k,)).copy()
        self.prior_sd = np.broadcast_to(np.asarray(prior_sd, dtype=float), (k,)).copy()
        if np.any(self.prior_sd <= 0):
            raise InvalidParam("prior standard deviations must be positive")
        self.cfg = cfg or InversionConfig()
        self.n_failures = 0

    @property
    def dim(self) -> int:
        return len(self.names)

    def initial_point(self) -> np.ndarray:
        return np.log([self.model.params[n] for n in self.names])

    def _model_at(self, q):
        return self.model.with_params(**dict(zip(self.names, np.exp(q))))

    def log_prior(self, q):
        z = (np.asarray(q) - self.prior_mean) / self.prior_sd
        return float(-0.5 * z @ z - np.sum(np.log(self.prior_sd)) - 0.5 * len(z) * math.log(2 * math.pi))

    def _eval(self, q, want_gradient):
        q = np.asarray(q, dtype=float)
        if not np.all(np.isfinite(q)) or np.any(np.abs(q) > 700):
            return -math.inf, None
        try:
            rep = loglik(self._model_at(q), self.series, self.cfg, want_gradient)
        except (EpibirthError, FloatingPointError):
            self.n_failures += 1
            return -math.inf, None
        if not math.isfinite(rep.loglik):
            return -math.inf, None
        lp = rep.loglik + self.log_prior(q)
        if not want_gradient:
            return lp, None
        g = np.array([rep.gradient[n] for n in self.names])
        g -= (q - self.prior_mean) / self.prior_sd**2
        return lp, g

    def __call__(self, q):
        return self._eval(q, True)

    def logp(self, q) -> float:
        return self._eval(q, False)[0]


def _logp_only(target):
    def f(q):
        out = target(q)
        return out[0] if isinstance(out, tuple) else out

    return f


def laplace_approximation(target, q0, fd_step: float = 1e-4):
    """Posterior mode and the inverse Hessian there (a Gaussian approximation).

    The Hessian is built from central differences of the analytic gradient.
    """
    q0 = np.asarray(q0, dtype=float)

    def neg(q):
        lp, g = target(q)
        if not math.isfinite(lp) or g is None:
            return 1e300, np.zeros_like(q)
        return -lp, -g

    res = optimize.minimize(neg, q0, jac=True, method="BFGS", options={"gtol": 1e-6})
    mode = res.x
    k = mode.size
    H = np.empty((k, k))
    for i in range(k):
        e = np.zeros(k)
        e[i] = fd_step
        H[i] = (neg(mode + e)[1] - neg(mode - e)[1]) / (2 * fd_step)
    H = 0.5 * (H + H.T)
    try:
        cov = np.linalg.inv(H)
        np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise BadInit("posterior Hessian at the mode is not positive definite") from None
    return mode, cov


# ------------------------------------------------------------------ output


def effective_sample_size(x: np.ndarray) -> np.ndarray:
    """ESS per column from Geyer's initial monotone sequence estimator.

    Columns whose variance overflows get NaN.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n, k = x.shape
    out = np.empty(k)
    for j in range(k):
        with np.errstate(over="ignore", invalid="ignore"):
            y = x[:, j] - x[:, j].mean()
            var = y @ y / n
        if not np.isfinite(var):
            out[j] = np.nan
            continue
        if n < 4 or var == 0:
            out[j] = float(n)
            continue
        m = 1 << (2 * n - 1).bit_length()
        spec = np.fft.rfft(y, m)
        acf = np.fft.irfft(spec * np.conj(spec), m)[:n] / (n * var)
        pairs = acf[: n - 1 - (n - 1) % 2].reshape(-1, 2).sum(axis=1)
        tau = -1.0
        run = np.inf
        for g in pairs:
            if g <= 0:
                break
            run = min(run, g)
            tau += 2 * run
        out[j] = n / max(tau, 1e-12)
    return out


@dataclass
class ChainOutput:
    """Retained draws on the log scale plus diagnostics."""

    draws: np.ndarray
    names: tuple
    acceptance: float
    seed: int | None
    ess: np.ndarray = field(default=None)
    log_post: np.ndarray | None = None
    n_divergent: int = 0
    step_size: float | None = None
    log_scale: tuple | None = None  # which columns are logs of positive parameters
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        self.draws = np.asarray(self.draws, dtype=float)
        if self.log_scale is None:
            self.log_scale = (True,) * len(self.names)
        if self.ess is None:
            self.ess = effective_sample_size(self.draws) if len(self.draws) else np.zeros(len(self.names))

    def __len__(self):
        return self.draws.shape[0]

    def column(self, name: str) -> np.ndarray:
        return self.draws[:, self.names.index(name)]

    def summary(self, level: float = 0.95) -> list:
        """Posterior mean and equal-tailed interval of each parameter on its natural scale."""
        lo, hi = (1 - level) / 2, (1 + level) / 2
        rows = []
        for j, name in enumerate(self.names):
            col = np.exp(self.draws[:, j]) if self.log_scale[j] else self.draws[:, j]
            rows.append(
                {
                    "name": name,
                    "mean": float(col.mean()),
                    "sd": float(col.std(ddof=1)) if len(col) > 1 else 0.0,
                    "lower": float(np.quantile(col, lo)),
                    "upper": float(np.quantile(col, hi)),
                    "log_mean": float(self.draws[:, j].mean()),
                    "ess": float(self.ess[j]),
                }
            )
        return rows


# ------------------------------------------------------------------ HMC


@dataclass(frozen=True)
class HMCConfig:
    """Leapfrog HMC settings.

    ``mass`` is a per-coordinate vector or, for correlated targets, a full
    positive definite matrix; ``None`` means the identity.  With
    ``adapt_step`` the step size is tuned by dual averaging during burn-in.
    """

    step_size: float = 0.05
    leapfrog_steps: int = 20
    mass: tuple | np.ndarray | None = None
    iterations: int = 10000
    burn_in: int = 2000
    seed: int = 0
    thinning: int = 1
    adapt_step: bool = False
    target_accept: float = 0.65

    def __post_init__(self):
        if not self.step_size > 0:
            raise InvalidParam("step size must be positive")
        if int(self.leapfrog_steps) != self.leapfrog_steps or self.leapfrog_steps < 1:
            raise InvalidParam("leapfrog_steps must be a positive integer")
        if self.iterations < 1 or not 0 <= self.burn_in < self.iterations:
            raise InvalidParam("need 0 <= burn_in < iterations")
        if self.thinning < 1:
            raise InvalidParam("thinning must be at least 1")
        if not 0 < self.target_accept < 1:
            raise InvalidParam("target acceptance must lie in (0, 1)")
        if self.mass is not None:
            m = np.asarray(self.mass, dtype=float)
            if m.ndim == 1 and np.any(m <= 0):
                raise InvalidParam("mass entries must be positive")
            if m.ndim == 2:
                try:
                    np.linalg.cholesky(m)
                except np.linalg.LinAlgError:
                    raise InvalidParam("mass matrix must be positive definite") from None


class _Kinetic:
    """Momentum distribution N(0, M) and its kinetic energy."""

    def __init__(self, mass, dim):
        m = np.ones(dim) if mass is None else np.asarray(mass, dtype=float)
        self.dense = m.ndim == 2
        if self.dense:
            self.chol = np.linalg.cholesky(m)
            self.inv = np.linalg.inv(m)
        else:
            if m.shape != (dim,):
                raise InvalidParam(f"mass must have {dim} entries")
            self.sqrt = np.sqrt(m)
            self.inv = 1.0 / m

    def draw(self, rng, dim):
        z = rng.standard_normal(dim)
        return self.chol @ z if self.dense else self.sqrt * z

    def velocity(self, p):
        return self.inv @ p if self.dense else self.inv * p

    def energy(self, p):
        return 0.5 * float(p @ self.velocity(p))


def _leapfrog(target, q, p, grad, eps, steps, kin):
    p = p + 0.5 * eps * grad
    lp = -math.inf
    for i in range(steps):
        q = q + eps * kin.velocity(p)
        lp, grad = target(q)
        if not math.isfinite(lp) or grad is None or not np.all(np.isfinite(grad)):
            return q, p, -math.inf, None
        p = p + (eps if i < steps - 1 else 0.5 * eps) * grad
    return q, -p, lp, grad


class _DualAveraging:
    def __init__(self, eps0, target):
        self.mu = math.log(10 * eps0)
        self.target = target
        self.hbar = 0.0
        self.log_eps = math.log(eps0)
        self.log_eps_bar = 0.0
        self.t = 0

    def update(self, accept_prob):
        self.t += 1
        t = self.t
        w = 1.0 / (t + 10)
        self.hbar = (1 - w) * self.hbar + w * (self.target - accept_prob)
        self.log_eps = self.mu - math.sqrt(t) / 0.05 * self.hbar
        eta = t**-0.75
        self.log_eps_bar = eta * self.log_eps + (1 - eta) * self.log_eps_bar
        return math.exp(self.log_eps)

    @property
    def final(self):
        return math.exp(self.log_eps_bar)


def hmc_sample(target: Callable, cfg: HMCConfig, init, names: Sequence[str] | None = None) -> ChainOutput:
    """Hamiltonian Monte Carlo with leapfrog proposals and a Metropolis correction.

    Trajectories whose energy error exceeds the divergence threshold are
    rejected and counted in ``n_divergent``.
    """
    q = np.array(init, dtype=float)
    dim = q.size
    names = tuple(names) if names is not None else tuple(f"q{j}" for j in range(dim))
    lp, grad = target(q)
    if not math.isfinite(lp) or grad is None or not np.all(np.isfinite(grad)):
        raise BadInit("log posterior or its gradient is not finite at the initial point")
    kin = _Kinetic(cfg.mass, dim)
    rng = np.random.default_rng(cfg.seed)
    eps = cfg.step_size
    adapt = _DualAveraging(eps, cfg.target_accept) if cfg.adapt_step else None
    kept, kept_lp = [], []
    accepted = 0
    divergent = 0
    for it in range(cfg.iterations):
        p0 = kin.draw(rng, dim)
        h0 = -lp + kin.energy(p0)
        q1, p1, lp1, g1 = _leapfrog(target, q, p0, grad, eps, cfg.leapfrog_steps, kin)
        if g1 is None:
            dH = math.inf
        else:
            dH = (-lp1 + kin.energy(p1)) - h0
        if not abs(dH) <= DIVERGENCE_THRESHOLD:
            if it >= cfg.burn_in:
                divergent += 1
            accept_prob = 0.0
        else:
            accept_prob = math.exp(min(0.0, -dH))
        if rng.random() < accept_prob:
            q, lp, grad = q1, lp1, g1
            if it >= cfg.burn_in:
                accepted += 1
        if adapt is not None and it < cfg.burn_in:
            eps = adapt.update(accept_prob)
            if it == cfg.burn_in - 1:
                eps = adapt.final
        if it >= cfg.burn_in and (it - cfg.burn_in) % cfg.thinning == 0:
            kept.append(q.copy())
            kept_lp.append(lp)
    n_post = cfg.iterations - cfg.burn_in
    return ChainOutput(
        np.array(kept).reshape(-1, dim),
        names,
        accepted / n_post,
        cfg.seed,
        log_post=np.array(kept_lp),
        n_divergent=divergent,
        step_size=eps,
    )


# ------------------------------------------------------------------ RWM


def rw_metropolis_sample(
    target: Callable,
    proposal_scale,
    iterations: int,
    seed: int | None,
    init,
    burn_in: int = 0,
    thinning: int = 1,
    proposal_cov=None,
    names: Sequence[str] | None = None,
) -> ChainOutput:
    """Random-walk Metropolis with Gaussian proposals.

    Proposals are ``proposal_scale * z`` with independent coordinates, or
    ``proposal_scale * L z`` with ``L`` the Cholesky factor of
    ``proposal_cov`` when given.
    """
    logp = _logp_only(target)
    q = np.array(init, dtype=float)
    dim = q.size
    names = tuple(names) if names is not None else tuple(f"q{j}" for j in range(dim))
    scale = np.broadcast_to(np.asarray(proposal_scale, dtype=float), (dim,))
    if np.any(scale <= 0):
        raise InvalidParam("proposal scales must be positive")
    if iterations < 1 or not 0 <= burn_in < iterations or thinning < 1:
        raise InvalidParam("need iterations >= 1, 0 <= burn_in < iterations, thinning >= 1")
    chol = None if proposal_cov is None else np.linalg.cholesky(np.asarray(proposal_cov, dtype=float))
    lp = logp(q)
    if not math.isfinite(lp):
        raise BadInit("log posterior is not finite at the initial point")
    rng = np.random.default_rng(seed)
    kept, kept_lp = [], []
    accepted = 0
    for it in range(iterations):
        z = rng.standard_normal(dim)
        step = scale * (chol @ z if chol is not None else z)
        cand = q + step
        lp_c = logp(cand)
        if math.log(rng.random()) < lp_c - lp:
            q, lp = cand, lp_c
            if it >= burn_in:
                accepted += 1
        if it >= burn_in and (it - burn_in) % thinning == 0:
            kept.append(q.copy())
            kept_lp.append(lp)
    return ChainOutput(
        np.array(kept).reshape(-1, dim),
        names,
        accepted / (iterations - burn_in),
        seed,
        log_post=np.array(kept_lp),
    )
