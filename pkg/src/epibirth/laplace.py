"""Numerical inversion of Laplace transforms of probability functions.

The original ``P(t)`` is recovered from the alternating Fourier series

    P(t) ~ e^{M/2}/(2t) Re f(M/2t) + e^{M/2}/t sum_{k>=1} (-1)^k Re f((M + 2k pi i)/2t)

whose discretization error is bounded by ``1/(e^M - 1)`` for originals in
``[0, 1]``.  The tail of the series is summed with a Levin u-transform
(Euler binomial averaging is available as a fallback).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numba
import numpy as np

from .errors import InvalidParam, InvalidTime, NonConvergence

ACCELERATIONS = ("levin_u", "euler", "none")
_EPS = np.finfo(float).eps
# Smallest t that is inverted; below it the abscissae blow up as 1/t.
TINY_TIME = 1e-12
_EULER_M = 11
_EULER_W = np.array([math.comb(_EULER_M, i) for i in range(_EULER_M + 1)]) / 2.0**_EULER_M


@dataclass(frozen=True)
class InversionConfig:
    M: float = 20.0
    max_terms: int = 2000
    rel_tol: float = 1e-10
    acceleration: str = "levin_u"
    min_terms: int = 12
    clamp_slack: float = 1e-6

    def __post_init__(self):
        if not self.M > 0:
            raise InvalidParam(f"precision parameter M must be positive, got {self.M}")
        if self.max_terms < 8:
            raise InvalidParam("max_terms must be at least 8")
        if not self.rel_tol > 0:
            raise InvalidParam("rel_tol must be positive")
        if self.acceleration not in ACCELERATIONS:
            raise InvalidParam(f"unknown acceleration {self.acceleration!r}")
        if self.min_terms < 2 or self.min_terms > self.max_terms:
            raise InvalidParam("min_terms must lie in [2, max_terms]")

    @property
    def discretization_bound(self) -> float:
        return discretization_bound(self.M)


def discretization_bound(M: float) -> float:
    return 1.0 / math.expm1(M)


def min_precision_for(rel_tol: float) -> float:
    """Smallest M whose discretization bound is below ``rel_tol``."""
    return -math.log(rel_tol / (1.0 + rel_tol))


@dataclass(frozen=True)
class InversionReport:
    value: float
    terms_used: int
    est_error: float
    clamped: bool


@dataclass
class GridInversion:
    """Batched inversion result; indexing yields an :class:`InversionReport`."""

    values: np.ndarray
    est_error: np.ndarray
    clamped: np.ndarray
    terms_used: int

    def __getitem__(self, idx) -> InversionReport:
        return InversionReport(
            float(self.values[idx]),
            self.terms_used,
            float(self.est_error[idx]),
            bool(self.clamped[idx]),
        )

    @property
    def shape(self):
        return self.values.shape


def abscissae(t: float, n: int, M: float = 20.0, start: int = 0) -> np.ndarray:
    """The points ``s_k = (M + 2 k pi i) / (2t)`` for ``k = start .. start+n-1``."""
    k = np.arange(start, start + n, dtype=float)
    return (M + 2j * np.pi * k) / (2.0 * t)


def series_terms(values: np.ndarray, t: float, M: float, start: int = 0) -> np.ndarray:
    """Map transform values at the abscissae (first axis) to real series terms."""
    re = np.real(values)
    k = np.arange(start, start + re.shape[0])
    w = np.where(k % 2 == 0, 1.0, -1.0)
    w = np.where(k == 0, 0.5, w)
    w = w.reshape((-1,) + (1,) * (re.ndim - 1))
    return (math.exp(M / 2.0) / t) * w * re


class _Accelerator:
    """Plain or Euler-averaged partial sums over term arrays (n, npts)."""

    def __init__(self, kind: str):
        self.kind = kind

    def estimate(self, terms: np.ndarray, partial: np.ndarray, n: int):
        """Estimate using terms[0:n]; returns None if not yet defined."""
        if self.kind == "euler":
            if n < _EULER_M + 1:
                return None
            return _EULER_W @ partial[n - 1 - _EULER_M:n]
        return partial[n - 1]


@numba.njit(cache=True, nogil=True)
def _levin_weights(n, out):
    """Signed, rescaled Levin u weights for the first ``n`` terms."""
    k = n - 1
    top = -np.inf
    for j in range(n):
        out[j] = (
            math.lgamma(k + 1.0) - math.lgamma(j + 1.0) - math.lgamma(k - j + 1.0)
            + (k - 1) * math.log((1.0 + j) / (1.0 + k))
        )
        top = max(top, out[j])
    for j in range(n):
        out[j] = math.exp(out[j] - top)
        if j % 2 == 1:
            out[j] = -out[j]


@numba.njit(cache=True, nogil=True, error_model="numpy")
def _levin_point(terms, partial, q, n, w):
    """Levin u estimate from the first ``n`` terms at point ``q``.

    Where the remainder estimate breaks down (zero terms) the Euler average
    of the last partial sums is used, or the partial sum itself while too
    few terms exist.
    """
    num = 0.0
    den = 0.0
    for j in range(n):
        inv = 1.0 / ((1.0 + j) * terms[j, q])
        num += w[j] * partial[j, q] * inv
        den += w[j] * inv
    cur = num / den
    if np.isfinite(cur):
        return cur
    if n < _EULER_M + 1:
        return partial[n - 1, q]
    cur = 0.0
    for i in range(_EULER_M + 1):
        cur += _EULER_W[i] * partial[n - 1 - _EULER_M + i, q]
    return cur


@numba.njit(cache=True, nogil=True, error_model="numpy")
def _levin_run(terms, noise, rel_tol, min_terms, n_start, blocker):
    """Smallest ``n >= n_start`` at which every point's Levin step is small.

    A step is small when it is below ``rel_tol * max(|estimate|, 1e-12)`` or
    the point's rounding floor ``noise``.

    Equivalent to evaluating all points at every ``n``, but the point that
    failed last is tried first and the rest are only visited when it passes.
    Returns (status, n, est, step, blocker); status 1 when converged.
    """
    n_avail, npts = terms.shape
    partial = np.empty_like(terms)
    run = np.zeros(npts)
    for i in range(n_avail):
        for q in range(npts):
            run[q] += terms[i, q]
            partial[i, q] = run[q]
    w_prev = np.empty(n_avail)
    w_cur = np.empty(n_avail)
    first = max(max(3, min_terms), n_start)
    if first <= n_avail:
        _levin_weights(first - 1, w_cur)
    for n in range(first, n_avail + 1):
        w_prev, w_cur = w_cur, w_prev
        _levin_weights(n, w_cur)
        q = blocker
        a = _levin_point(terms, partial, q, n, w_cur)
        b = _levin_point(terms, partial, q, n - 1, w_prev)
        if abs(a - b) > max(rel_tol * max(abs(a), 1e-12), noise[q]):
            continue
        passed = True
        for q in range(npts):
            if q == blocker:
                continue
            a = _levin_point(terms, partial, q, n, w_cur)
            b = _levin_point(terms, partial, q, n - 1, w_prev)
            if abs(a - b) > max(rel_tol * max(abs(a), 1e-12), noise[q]):
                blocker = q
                passed = False
                break
        if passed:
            est = np.empty(npts)
            step = np.empty(npts)
            for q in range(npts):
                est[q] = _levin_point(terms, partial, q, n, w_cur)
                step[q] = abs(est[q] - _levin_point(terms, partial, q, n - 1, w_prev))
            return 1, n, est, step, blocker
    n = n_avail
    est = np.empty(npts)
    step = np.full(npts, np.inf)
    if n >= 2:
        _levin_weights(n, w_cur)
        _levin_weights(n - 1, w_prev)
        for q in range(npts):
            est[q] = _levin_point(terms, partial, q, n, w_cur)
            step[q] = abs(est[q] - _levin_point(terms, partial, q, n - 1, w_prev))
    else:
        for q in range(npts):
            est[q] = partial[n - 1, q]
    return 0, n, est, step, blocker


class _LevinState:
    """Lets :func:`_levin_run` resume after more terms are appended."""

    def __init__(self, cfg: InversionConfig):
        self.cfg = cfg
        self.n_next = cfg.min_terms
        self.blocker = 0

    def advance(self, terms: np.ndarray):
        terms = np.ascontiguousarray(terms, dtype=float)
        noise = 64.0 * _EPS * np.max(np.abs(terms), axis=0)
        with np.errstate(divide="ignore", invalid="ignore"):
            status, n, est, step, self.blocker = _levin_run(
                terms, noise, self.cfg.rel_tol, self.cfg.min_terms, self.n_next, self.blocker
            )
        self.n_next = terms.shape[0] + 1
        return bool(status), int(n), est, step


def _accelerate(terms: np.ndarray, cfg: InversionConfig, state: _LevinState | None = None):
    """Run the stopping rule over term rows.

    Returns (converged, terms_used, estimate, last_step) with estimate and
    last_step flat over grid points.  For Levin acceleration ``state`` lets
    a caller resume after appending terms.
    """
    n_avail = terms.shape[0]
    if cfg.acceleration == "levin_u" and terms.shape[1] > 0:
        state = state or _LevinState(cfg)
        return state.advance(terms)
    partial = np.cumsum(terms, axis=0)
    noise = 64.0 * _EPS * np.max(np.abs(terms), axis=0)
    acc = _Accelerator(cfg.acceleration)
    prev = None
    est = partial[-1]
    step = np.full(terms.shape[1:], np.inf)
    # Estimates before min_terms - 1 can never satisfy the stopping rule.
    for n in range(max(1, cfg.min_terms - 1), n_avail + 1):
        cur = acc.estimate(terms, partial, n)
        if cur is None:
            continue
        if prev is not None:
            step = np.abs(cur - prev)
            scale = max(float(np.max(np.abs(cur))) if cur.size else 0.0, 1e-12)
            thresh = np.maximum(cfg.rel_tol * scale, noise)
            if n >= cfg.min_terms and np.all(step <= thresh):
                return True, n, cur, step
        prev = cur
        est = cur
    return False, n_avail, est, step


def _finalize(est, step, cfg: InversionConfig, clamp: bool):
    err = step + cfg.discretization_bound
    clamped = np.zeros(est.shape, dtype=bool)
    if not clamp:
        return est, err, clamped
    slack = cfg.clamp_slack
    low = est < 0.0
    high = est > 1.0
    if np.any(est < -slack) or np.any(est > 1.0 + slack):
        worst = float(np.max(np.maximum(-est, est - 1.0)))
        raise NonConvergence(f"inverted probability leaves [0, 1] by {worst:.3g}")
    clamped = low | high
    est = np.clip(est, 0.0, 1.0)
    return est, err, clamped


def invert_grid(
    f_grid: np.ndarray,
    t: float,
    cfg: InversionConfig | None = None,
    clamp: bool = True,
) -> GridInversion:
    """Invert a batch of transforms sampled at the shared abscissae.

    ``f_grid[k, ...]`` holds the transform values at ``s_k`` (complex, or the
    real parts only).  All points share one term count, chosen so that the
    stopping rule holds at every point.
    """
    cfg = cfg or InversionConfig()
    if not t > 0:
        raise InvalidTime(f"t must be positive, got {t}")
    f_grid = np.asarray(f_grid)
    grid_shape = f_grid.shape[1:]
    terms = series_terms(f_grid, t, cfg.M).reshape(f_grid.shape[0], -1)
    n_use = min(terms.shape[0], cfg.max_terms)
    ok, used, est, step = _accelerate(terms[:n_use], cfg)
    if not ok:
        raise NonConvergence(
            f"stopping rule not met within {n_use} terms (max step {np.max(step):.3g})"
        )
    vals, err, clamped = _finalize(est, step, cfg, clamp)
    return GridInversion(
        vals.reshape(grid_shape), err.reshape(grid_shape), clamped.reshape(grid_shape), used
    )


def invert_adaptive(
    evaluate: Callable[[np.ndarray], np.ndarray],
    t: float,
    cfg: InversionConfig | None = None,
    clamp: bool = True,
    first_block: int = 32,
    block: int = 16,
) -> GridInversion:
    """Invert with lazily evaluated abscissae.

    ``evaluate(s)`` maps a 1-D array of abscissae to an array whose first axis
    matches ``s``.  Abscissae are requested in growing blocks until the
    stopping rule holds or ``max_terms`` is exhausted.
    """
    cfg = cfg or InversionConfig()
    if not t > 0:
        raise InvalidTime(f"t must be positive, got {t}")
    n = min(max(first_block, cfg.min_terms), cfg.max_terms)
    vals = np.real(np.asarray(evaluate(abscissae(t, n, cfg.M))))
    grid_shape = vals.shape[1:]
    npts = int(np.prod(grid_shape))
    state = _LevinState(cfg) if cfg.acceleration == "levin_u" and npts else None
    while True:
        terms = series_terms(vals, t, cfg.M).reshape(vals.shape[0], -1)
        ok, used, est, step = _accelerate(terms, cfg, state)
        if ok:
            v, err, clamped = _finalize(est, step, cfg, clamp)
            return GridInversion(
                v.reshape(grid_shape), err.reshape(grid_shape), clamped.reshape(grid_shape), used
            )
        if n >= cfg.max_terms:
            raise NonConvergence(
                f"stopping rule not met within {n} terms (max step {np.max(step):.3g})"
            )
        extra = min(max(block, n // 2), cfg.max_terms - n)
        more = np.real(np.asarray(evaluate(abscissae(t, extra, cfg.M, start=n))))
        vals = np.concatenate([vals, more], axis=0)
        n += extra


def invert_at(
    f: Callable[[complex], complex],
    t: float,
    cfg: InversionConfig | None = None,
) -> InversionReport:
    """Invert a scalar transform at time ``t``."""
    cfg = cfg or InversionConfig()
    if not t > 0:
        raise InvalidTime(f"t must be positive, got {t}")
    if t < TINY_TIME:
        # t -> 0 limit of P(t) is lim s f(s) as s -> infinity.
        s = 1e15
        v = float(np.real(s * f(s)))
        return InversionReport(min(max(v, 0.0), 1.0), 0, abs(v - round(v)), v != min(max(v, 0.0), 1.0))

    def evaluate(s):
        return np.array([f(complex(z)) for z in s], dtype=complex).reshape(-1, 1)

    res = invert_adaptive(evaluate, t, cfg)
    return res[0]
