"""Discrete-observation likelihoods for compartmental models."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptySupport, ImpossibleTransition, InvalidParam, InvalidTime, NumericalUnderflow
from .laplace import InversionConfig
from .lattice import backward_probabilities, transition_probabilities
from .models import (
    CompartmentalModel,
    _check_state,
    as_birth_process,
    enumerate_event_solutions,
    event_bounds,
    reachable_mask,
    solve_events,
)

PROB_FLOOR = 1e-300


@dataclass
class ObservationSeries:
    """Counts per compartment at increasing times; NaN marks unobserved."""

    times: np.ndarray
    counts: np.ndarray
    labels: tuple
    total: int | None = None
    unit: str = ""
    name: str = ""

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.counts = np.asarray(self.counts, dtype=float)
        self.labels = tuple(self.labels)
        if self.counts.ndim != 2 or self.counts.shape != (self.times.size, len(self.labels)):
            raise InvalidParam("counts must be a (n_times, n_compartments) table")
        if np.any(np.diff(self.times) <= 0):
            raise InvalidParam("observation times must be strictly increasing")
        obs = self.counts[~np.isnan(self.counts)]
        if np.any(obs < 0) or np.any(obs != np.round(obs)):
            raise InvalidParam("observed counts must be nonnegative integers")
        if self.total is not None:
            full = ~np.isnan(self.counts).any(axis=1)
            bad = np.flatnonzero(full & (self.counts.sum(axis=1) != self.total))
            if bad.size:
                raise InvalidParam(f"row {bad[0]} does not sum to the closed total {self.total}")

    def __len__(self):
        return self.times.size

    @property
    def fully_observed(self) -> bool:
        return not np.isnan(self.counts).any()

    def state(self, j: int) -> np.ndarray:
        return self.counts[j].astype(np.int64)

    def __eq__(self, other):
        if not isinstance(other, ObservationSeries):
            return NotImplemented
        return (
            np.array_equal(self.times, other.times)
            and np.array_equal(self.counts, other.counts, equal_nan=True)
            and self.labels == other.labels
            and self.total == other.total
            and self.unit == other.unit
        )


@dataclass
class LogLikReport:
    loglik: float
    per_interval: list
    gradient: dict | None = None
    impossible_interval: int | None = None
    terms_used: list = field(default_factory=list)


def _interval_prob(model, u, v, dt, cfg, gradient, params):
    W = enumerate_event_solutions(model, u, v)
    names = model.param_names
    if not W:
        return 0.0, None, True, 0
    window = tuple(int(max(w[k] for w in W)) for k in range(model.d))
    if gradient:
        spec, sens = as_birth_process(model, u, window, params, with_sensitivities=True)
        res = transition_probabilities(spec, dt, cfg, sensitivities=sens, names=names, cells=W)
        grad = res.derivatives.sum(axis=1)
    else:
        spec = as_birth_process(model, u, window, params)
        res = transition_probabilities(spec, dt, cfg, cells=W)
        grad = None
    p = float(res.probabilities.sum())
    structural = False
    if p <= PROB_FLOOR:
        reach = reachable_mask(spec)
        structural = not any(reach[w] for w in W)
    return p, grad, structural, res.terms_used


def loglik(
    model: CompartmentalModel,
    series: ObservationSeries,
    cfg: InversionConfig | None = None,
    want_gradient: bool = False,
) -> LogLikReport:
    """Sum of log transition probabilities between consecutive observations.

    The gradient is taken with respect to the log parameters.  Parameters may
    change at ``model.change_points`` provided every change falls on an
    observation time.
    """
    cfg = cfg or InversionConfig()
    if not series.fully_observed:
        raise InvalidParam("loglik needs every compartment observed; use interval_kernel for latent counts")
    names = model.param_names
    per = []
    terms = []
    grad = np.zeros(len(names)) if want_gradient else None
    for j in range(len(series) - 1):
        t0, t1 = series.times[j], series.times[j + 1]
        model.check_interval(t0, t1)
        params = model.params_at(t0)
        u, v = series.state(j), series.state(j + 1)
        p, g, structural, used = _interval_prob(model, u, v, t1 - t0, cfg, want_gradient, params)
        terms.append(used)
        if structural:
            per.append(-math.inf)
            return LogLikReport(-math.inf, per, None, j, terms)
        if p <= PROB_FLOOR:
            raise NumericalUnderflow(
                f"interval {j}: probability {p:.3g} below floor but not structurally zero", interval=j
            )
        per.append(math.log(p))
        if want_gradient:
            grad += g / p
    gdict = dict(zip(names, map(float, grad))) if want_gradient else None
    return LogLikReport(float(sum(per)), per, gdict, None, terms)


def _completion_events(model, u, partial_v):
    """Event vectors consistent with the observed coordinates of ``partial_v``."""
    u = _check_state(model, u)
    partial_v = np.asarray(partial_v, dtype=float)
    obs = ~np.isnan(partial_v)
    if not obs.any():
        raise InvalidParam("at least one coordinate must be observed")
    A = model.incidence
    diff = np.where(obs, partial_v, 0).astype(np.int64) - u
    sols = solve_events(A[obs], diff[obs], event_bounds(model, u))
    if not sols:
        return []
    V = u + np.asarray(sols, dtype=np.int64) @ A.T
    ok = (V >= 0).all(axis=1)
    return [(w, tuple(v.tolist())) for w, v, k in zip(sols, V, ok) if k]


def interval_kernel(
    model: CompartmentalModel, u, partial_v, t: float, cfg: InversionConfig | None = None, params=None
) -> dict:
    """Probabilities ``Pr{Y(t) = v | Y(0) = u}`` of every completion ``v``.

    ``partial_v`` holds NaN for unobserved compartments.  The returned mapping
    is ``{completed state: probability}`` (not renormalised).
    """
    cfg = cfg or InversionConfig()
    if not t > 0:
        raise InvalidTime("t must be positive")
    cands = _completion_events(model, u, partial_v)
    if not cands:
        raise EmptySupport(f"no feasible completion of {list(partial_v)} from {list(u)}")
    W = [w for w, _ in cands]
    window = tuple(int(max(w[k] for w in W)) for k in range(model.d))
    spec = as_birth_process(model, u, window, params)
    res = transition_probabilities(spec, t, cfg, cells=W)
    out: dict = {}
    for (w, v), p in zip(cands, res.probabilities):
        out[v] = out.get(v, 0.0) + float(p)
    return out


def _offsets(A, sources):
    """Event vectors from the furthest-back source to every source, or None."""
    diffs = sources - sources[0]
    d = np.rint(np.linalg.lstsq(A, diffs.T, rcond=None)[0].T).astype(np.int64)
    if not np.array_equal(d @ A.T, diffs):
        return None
    xs = d - d.min(axis=0)
    if not (xs == 0).all(axis=1).any():
        return None
    return xs


def backward_kernel(
    model: CompartmentalModel, sources, v, t: float, cfg: InversionConfig | None = None, params=None
) -> np.ndarray:
    """``Pr{Y(t) = v | Y(0) = u}`` for each ``u`` in ``sources`` from one backward sweep.

    All sources must be connected to each other through event vectors (as
    with the latent-removal completions of an acyclic model); the lattice is
    anchored at the source that lies furthest back.
    """
    cfg = cfg or InversionConfig()
    A = model.incidence
    if not model.is_acyclic() or np.linalg.matrix_rank(A) < model.d:
        raise InvalidParam("backward_kernel needs an acyclic model with independent channels")
    sources = np.atleast_2d(np.asarray(sources, dtype=np.int64))
    v = _check_state(model, v)
    xs = _offsets(A, sources)
    if xs is None:
        raise InvalidParam("sources are not connected by event vectors")
    origin = sources[int(np.flatnonzero((xs == 0).all(axis=1))[0])]
    target = solve_events(A, v - origin, [10**9] * model.d)
    out = np.zeros(len(sources))
    if not target:
        return out
    B = target[0]
    keep = [i for i, x in enumerate(xs) if np.all(x <= np.asarray(B))]
    if not keep:
        return out
    full = event_bounds(model, origin)
    if any(b > f for b, f in zip(B, full)):
        return out
    spec = as_birth_process(model, origin, B, params)
    vals = backward_probabilities(spec, t, cfg, cells=[xs[i] for i in keep])
    out[keep] = vals
    return out
