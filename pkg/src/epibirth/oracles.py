"""Independent checks on the Laplace-domain engine.

Nothing here touches the lattice sweeps or the inversion code: transition
probabilities come from uniformization of an explicitly enumerated generator,
sample paths from Gillespie's direct method, and transforms from brute-force
enumeration of lattice paths.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.stats import poisson

from .errors import InvalidParam, InvalidTime, TruncationLeak
from .models import CompartmentalModel, event_bounds


# ------------------------------------------------------------------ Gillespie


@dataclass
class SimulationPath:
    times: np.ndarray  # event times
    channels: np.ndarray  # channel index of each event
    states: np.ndarray  # (n_events + 1, m); row 0 is the initial state
    horizon: float

    def state_at(self, t: float) -> np.ndarray:
        n = int(np.searchsorted(self.times, t, side="right"))
        return self.states[n]


def _segments(model: CompartmentalModel, horizon: float):
    cuts = sorted(w for w, _ in model.change_points if 0 < w < horizon)
    edges = [0.0] + cuts + [horizon]
    return [(a, b, model.params_at(a)) for a, b in zip(edges[:-1], edges[1:])]


def gillespie_simulate(model: CompartmentalModel, y0, horizon: float, seed=None) -> SimulationPath:
    """One exact sample path on ``[0, horizon]``.

    Piecewise-constant parameters are honoured by restarting the exponential
    clock at each change point, which is exact by memorylessness.
    """
    if not horizon > 0:
        raise InvalidTime("horizon must be positive")
    rng = np.random.default_rng(seed)
    A = model.incidence
    y = np.asarray(y0, dtype=np.int64).copy()
    times, chans, states = [], [], [y.copy()]
    for start, stop, params in _segments(model, horizon):
        t = start
        while True:
            rates = model.rates(y[:, None], params)[:, 0]
            total = rates.sum()
            if total <= 0:
                break
            t += rng.exponential(1.0 / total)
            if t > stop:
                break
            k = int(rng.choice(model.d, p=rates / total))
            y = y + A[:, k]
            times.append(t)
            chans.append(k)
            states.append(y.copy())
    return SimulationPath(np.array(times), np.array(chans, dtype=np.int64), np.array(states), horizon)


def gillespie_endpoints(model: CompartmentalModel, y0, horizon: float, n_paths: int, seed=None):
    """States at ``horizon`` of ``n_paths`` independent paths, shape ``(n_paths, m)``.

    Paths are advanced in lockstep; each step draws the waiting time and the
    channel for every path still running.
    """
    if not horizon > 0:
        raise InvalidTime("horizon must be positive")
    rng = np.random.default_rng(seed)
    A = model.incidence
    Y = np.tile(np.asarray(y0, dtype=np.int64), (n_paths, 1))
    for start, stop, params in _segments(model, horizon):
        t = np.full(n_paths, start)
        active = np.ones(n_paths, dtype=bool)
        while active.any():
            idx = np.flatnonzero(active)
            rates = model.rates(Y[idx].T, params)  # (d, n)
            total = rates.sum(axis=0)
            alive = total > 0
            wait = np.full(idx.size, np.inf)
            wait[alive] = rng.exponential(1.0 / total[alive])
            t_new = t[idx] + wait
            fire = t_new <= stop
            u = rng.random(idx.size)
            cum = np.cumsum(rates, axis=0) / np.where(alive, total, 1.0)
            k = np.minimum((u[None, :] >= cum).sum(axis=0), model.d - 1)
            hit = idx[fire]
            Y[hit] += A[:, k[fire]].T
            t[idx] = t_new
            active[idx[~fire]] = False
    return Y


# ------------------------------------------------------------ uniformization


@dataclass
class TruncatedGenerator:
    """Generator on the event-count states reachable from ``origin``."""

    origin: np.ndarray
    events: np.ndarray  # (n_states, d) event counts
    states: np.ndarray  # (n_states, m) compartment counts
    Q: sp.csr_matrix
    exit_rates: np.ndarray
    leak_rates: np.ndarray
    uniformization_rate: float


def build_generator(model: CompartmentalModel, u, bound=None, absorb_at_bound=True):
    """Enumerate reachable event-count states by breadth-first search.

    Channels at their bound are switched off when ``absorb_at_bound`` (as in
    the birth-process construction); otherwise their rate leaks out of the
    truncated set.
    """
    u = np.asarray(u, dtype=np.int64)
    A = model.incidence
    bound = np.asarray(event_bounds(model, u) if bound is None else bound, dtype=np.int64)
    shape = tuple(int(b) + 1 for b in bound)
    # Rates of every event-count vector in the box, evaluated once.
    box = np.indices(shape).reshape(model.d, -1)
    box_rates = model.rates(u[:, None] + A @ box).T.tolist()
    strides = [int(np.prod(shape[k + 1:])) for k in range(model.d)]
    index = {0: 0}
    events = [0]
    rows, cols, vals = [], [], []
    exit_rates, leak = [], []
    queue = deque([0])
    while queue:
        flat = queue.popleft()
        i = index[flat]
        rates = box_rates[flat]
        out = 0.0
        lk = 0.0
        for k in range(model.d):
            r = rates[k]
            if r <= 0:
                continue
            if box[k, flat] >= bound[k]:
                if not absorb_at_bound:
                    lk += r
                    out += r
                continue
            nxt = flat + strides[k]
            if nxt not in index:
                index[nxt] = len(events)
                events.append(nxt)
                queue.append(nxt)
            rows.append(i)
            cols.append(index[nxt])
            vals.append(r)
            out += r
        exit_rates.append(out)
        leak.append(lk)
    events = box[:, events].T
    n = len(events)
    exit_rates = np.asarray(exit_rates)
    Q = sp.csr_matrix(
        (np.concatenate([vals, -exit_rates]), (np.concatenate([rows, np.arange(n)]), np.concatenate([cols, np.arange(n)]))),
        shape=(n, n),
    )
    ev = np.asarray(events, dtype=np.int64)
    states = u[None, :] + ev @ A.T
    lam = float(exit_rates.max()) if n else 0.0
    return TruncatedGenerator(u, ev, states, Q, exit_rates, np.asarray(leak), lam)


def uniformization_vector(gen: TruncatedGenerator, t: float, tol: float = 1e-13):
    """Row of ``exp(Q t)`` for the origin; returns (probabilities, leak)."""
    n = gen.Q.shape[0]
    p0 = np.zeros(n)
    p0[0] = 1.0
    lam = gen.uniformization_rate
    if t == 0 or lam == 0:
        return p0, 0.0
    mu = lam * t
    n_max = int(poisson.ppf(1.0 - tol / 2.0, mu)) + 1
    weights = poisson.pmf(np.arange(n_max + 1), mu)
    PT = (sp.identity(n, format="csr") + gen.Q / lam).T.tocsr()
    v = p0
    acc = weights[0] * v
    for j in range(1, n_max + 1):
        v = PT @ v
        acc = acc + weights[j] * v
    series_tail = 1.0 - weights.sum()
    leak = max(0.0, 1.0 - acc.sum())
    return acc, max(leak, series_tail)


def uniformization_probs(
    model: CompartmentalModel, u, t: float, bound=None, tol: float = 1e-12, absorb_at_bound=True
) -> dict:
    """``{state: Pr{Y(t) = state | Y(0) = u}}`` via uniformization."""
    if t < 0:
        raise InvalidTime("t must be nonnegative")
    if not tol > 0:
        raise InvalidParam("tol must be positive")
    gen = build_generator(model, u, bound, absorb_at_bound)
    probs, leak = uniformization_vector(gen, t, tol)
    if leak > tol:
        raise TruncationLeak(f"uniformization lost {leak:.3g} probability mass (tol {tol:.3g})")
    out: dict = {}
    for y, p in zip(map(tuple, gen.states), probs):
        out[y] = out.get(y, 0.0) + float(p)
    return out


def uniformization_event_probs(model: CompartmentalModel, u, t: float, bound=None, tol=1e-12) -> dict:
    """Same as :func:`uniformization_probs` keyed by event-count vectors."""
    gen = build_generator(model, u, bound)
    probs, _ = uniformization_vector(gen, t, tol)
    return {tuple(int(v) for v in x): float(p) for x, p in zip(gen.events, probs)}


# ----------------------------------------------------------- lattice path sums


def count_paths(bound) -> int:
    """Number of monotone unit-step paths from 0 to ``bound``."""
    total = sum(bound)
    n = math.factorial(total)
    for b in bound:
        n //= math.factorial(b)
    return n


def path_sum_transform(rates: np.ndarray, s: complex, x, max_paths: int = 10_000) -> complex:
    """``f_{0x}(s)`` by summing the product form over every lattice path.

    ``rates`` has shape ``(d, *lattice_shape)``.  Exponential in the lattice
    size; refuses more than ``max_paths`` paths.
    """
    x = tuple(int(v) for v in x)
    if count_paths(x) > max_paths:
        raise InvalidParam(f"{count_paths(x)} paths exceed the cap of {max_paths}")
    d = rates.shape[0]
    total = rates.sum(axis=0)

    def walk(p):
        if p == x:
            return 1.0 / (s + total[p])
        acc = 0.0
        for k in range(d):
            if p[k] < x[k]:
                q = p[:k] + (p[k] + 1,) + p[k + 1:]
                acc += rates[(k,) + p] / (s + total[p]) * walk(q)
        return acc

    return complex(walk((0,) * d))
