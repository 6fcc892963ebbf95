"""Compartmental models and their multivariate birth-process representation.

Each transition channel ``k`` moves one individual from compartment ``i_k``
to ``j_k``.  Counting the events of every channel gives a birth process
``X`` with ``Y(t) = Y(0) + A X(t)``, where column ``k`` of the incidence
matrix ``A`` has ``-1`` in row ``i_k`` and ``+1`` in row ``j_k``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from functools import lru_cache
from typing import Mapping, Sequence

import numpy as np

from .errors import InvalidParam, UnboundedLattice
from .laplace import InversionConfig
from .lattice import BirthProcessSpec, transition_probabilities

KINDS = ("sir", "seir", "sirs", "general_sir")


@dataclass(frozen=True)
class PowerLaw:
    """Rate ``coef * prod_l (Y_l^+) ** exponent_l``.

    Exponents are numbers or parameter names.  The rate is zero whenever a
    base count is zero or negative, whatever the exponent.
    """

    coef: str
    factors: tuple  # ((compartment index, exponent or parameter name), ...)

    def parameters(self):
        names = [self.coef]
        names += [e for _, e in self.factors if isinstance(e, str)]
        return names

    def _exponent(self, e, params):
        return params[e] if isinstance(e, str) else float(e)

    def evaluate(self, params: Mapping[str, float], Y: np.ndarray) -> np.ndarray:
        Y = np.asarray(Y, dtype=float)
        out = np.full(Y.shape[1:], float(params[self.coef]))
        for comp, e in self.factors:
            base = Y[comp]
            pos = base > 0
            expo = self._exponent(e, params)
            with np.errstate(divide="ignore", invalid="ignore"):
                term = np.where(pos, np.power(np.where(pos, base, 1.0), expo), 0.0)
            out = out * term
        return out

    def log_gradient(self, params, Y, names: Sequence[str]) -> np.ndarray:
        """d rate / d log(theta) for each parameter name."""
        Y = np.asarray(Y, dtype=float)
        rate = self.evaluate(params, Y)
        grads = np.zeros((len(names),) + rate.shape)
        for j, name in enumerate(names):
            if name == self.coef:
                grads[j] += rate
            for comp, e in self.factors:
                if e == name:
                    with np.errstate(divide="ignore", invalid="ignore"):
                        logb = np.where(Y[comp] > 0, np.log(np.where(Y[comp] > 0, Y[comp], 1.0)), 0.0)
                    grads[j] += rate * params[name] * logb
        return grads


@dataclass(frozen=True)
class Channel:
    source: int
    target: int
    law: PowerLaw
    name: str = ""


@dataclass(frozen=True)
class CompartmentalModel:
    labels: tuple
    channels: tuple
    params: Mapping[str, float]
    loop_bound: int = 1
    kind: str = "custom"
    # Optional piecewise-constant parameter changes: ((time, {name: value}), ...)
    change_points: tuple = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "channels", tuple(self.channels))
        object.__setattr__(self, "params", dict(self.params))
        m = len(self.labels)
        for ch in self.channels:
            if ch.source == ch.target:
                raise InvalidParam("self-transitions are not allowed")
            if not (0 <= ch.source < m and 0 <= ch.target < m):
                raise InvalidParam("channel references an unknown compartment")
            for p in ch.law.parameters():
                if p not in self.params:
                    raise InvalidParam(f"missing parameter {p!r}")
        for name, val in self.params.items():
            if not (val >= 0 and math.isfinite(val)):
                raise InvalidParam(f"parameter {name} must be finite and nonnegative, got {val}")
        if self.loop_bound is not None and self.loop_bound < 1:
            raise InvalidParam("loop bound must be a positive integer")

    @property
    def m(self) -> int:
        return len(self.labels)

    @property
    def d(self) -> int:
        return len(self.channels)

    @property
    def incidence(self) -> np.ndarray:
        A = np.zeros((self.m, self.d), dtype=np.int64)
        for k, ch in enumerate(self.channels):
            A[ch.source, k] = -1
            A[ch.target, k] = 1
        return A

    @property
    def param_names(self) -> tuple:
        return tuple(self.params)

    def is_acyclic(self) -> bool:
        adj = {i: {c.target for c in self.channels if c.source == i} for i in range(self.m)}
        state = {}

        def visit(i):
            state[i] = 1
            for j in adj[i]:
                if state.get(j) == 1 or (j not in state and not visit(j)):
                    return False
            state[i] = 2
            return True

        return all(visit(i) for i in range(self.m) if i not in state)

    def with_params(self, **updates) -> "CompartmentalModel":
        params = dict(self.params)
        params.update(updates)
        return replace(self, params=params)

    def params_at(self, time: float) -> dict:
        """Parameter values in force at ``time`` (piecewise constant)."""
        params = dict(self.params)
        for when, upd in sorted(self.change_points, key=lambda c: c[0]):
            if time >= when:
                params.update(upd)
        return params

    def check_interval(self, t_start: float, t_end: float) -> None:
        for when, _ in self.change_points:
            if t_start < when < t_end:
                raise InvalidParam(
                    f"parameters change at {when}, strictly inside the interval ({t_start}, {t_end})"
                )

    def rates(self, Y: np.ndarray, params=None) -> np.ndarray:
        """Channel rates for states ``Y`` of shape ``(m, ...)``; zero off support."""
        params = self.params if params is None else params
        Y = np.asarray(Y)
        valid = np.all(Y >= 0, axis=0)
        out = np.stack([ch.law.evaluate(params, Y) for ch in self.channels])
        return np.where(valid, out, 0.0)

    def rate_log_gradients(self, Y: np.ndarray, params=None, names=None) -> np.ndarray:
        """Shape ``(n_params, d, ...)``: derivatives with respect to log parameters."""
        params = self.params if params is None else params
        names = self.param_names if names is None else tuple(names)
        Y = np.asarray(Y)
        valid = np.all(Y >= 0, axis=0)
        g = np.stack([ch.law.log_gradient(params, Y, names) for ch in self.channels], axis=1)
        return np.where(valid, g, 0.0)


def _power(coef, *factors):
    return PowerLaw(coef, tuple(factors))


def builtin_model(kind: str, params: Mapping[str, float] | None = None, loop_bound: int = 1, **kw):
    """Construct one of the bundled models.

    sir: S->I at beta*S*I, I->R at gamma*I.  seir adds E with kappa*E.  sirs
    adds R->S at nu*R and honours ``loop_bound``.  general_sir uses
    beta*S^alpha*I^omega and gamma*I^eta.
    """
    p = dict(params or {})
    p.update(kw)
    if kind == "sir":
        labels = ("S", "I", "R")
        chans = (
            Channel(0, 1, _power("beta", (0, 1), (1, 1)), "SI"),
            Channel(1, 2, _power("gamma", (1, 1)), "IR"),
        )
        need = ("beta", "gamma")
        loop_bound = 1
    elif kind == "seir":
        labels = ("S", "E", "I", "R")
        chans = (
            Channel(0, 1, _power("beta", (0, 1), (2, 1)), "SE"),
            Channel(1, 2, _power("kappa", (1, 1)), "EI"),
            Channel(2, 3, _power("gamma", (2, 1)), "IR"),
        )
        need = ("beta", "kappa", "gamma")
        loop_bound = 1
    elif kind == "sirs":
        labels = ("S", "I", "R")
        chans = (
            Channel(0, 1, _power("beta", (0, 1), (1, 1)), "SI"),
            Channel(1, 2, _power("gamma", (1, 1)), "IR"),
            Channel(2, 0, _power("nu", (2, 1)), "RS"),
        )
        need = ("beta", "gamma", "nu")
    elif kind == "general_sir":
        labels = ("S", "I", "R")
        chans = (
            Channel(0, 1, _power("beta", (0, "alpha"), (1, "omega")), "SI"),
            Channel(1, 2, _power("gamma", (1, "eta")), "IR"),
        )
        need = ("beta", "gamma", "alpha", "omega", "eta")
        loop_bound = 1
    else:
        raise InvalidParam(f"unknown model kind {kind!r}; expected one of {KINDS}")
    missing = [n for n in need if n not in p]
    if missing:
        raise InvalidParam(f"{kind} model needs parameters {missing}")
    extra = [n for n in p if n not in need]
    if extra:
        raise InvalidParam(f"{kind} model does not take parameters {extra}")
    ordered = {n: float(p[n]) for n in need}
    return CompartmentalModel(labels, chans, ordered, loop_bound, kind)


def sir_from_r0(r0: float, gamma: float, population: int) -> CompartmentalModel:
    """SIR with infection rate expressed through the basic reproduction number."""
    return builtin_model("sir", beta=r0 * gamma / population, gamma=gamma)


# ---------------------------------------------------------------- lattice bounds


def _max_events_per_individual(model: CompartmentalModel, start: int) -> np.ndarray:
    edges = tuple((c.source, c.target) for c in model.channels)
    return np.array(_max_events(model.m, edges, model.loop_bound, start), dtype=np.int64)


@lru_cache(maxsize=256)
def _max_events(m: int, edges: tuple, U: int, start: int) -> tuple:
    """Max count of each channel over walks of one individual from ``start``.

    The starting compartment counts as a visit; no compartment may be visited
    more than ``U`` times.
    """
    d = len(edges)
    best = [0] * d
    out_edges = [[k for k, (src, _) in enumerate(edges) if src == i] for i in range(m)]

    def walk(comp, visits, counts):
        for k in range(d):
            best[k] = max(best[k], counts[k])
        for k in out_edges[comp]:
            nxt = edges[k][1]
            if visits[nxt] < U:
                visits[nxt] += 1
                counts[k] += 1
                walk(nxt, visits, counts)
                counts[k] -= 1
                visits[nxt] -= 1

    visits = [0] * m
    visits[start] = 1
    walk(start, visits, [0] * d)
    return tuple(best)


def event_bounds(model: CompartmentalModel, y0: Sequence[int]) -> tuple:
    """Per-channel maximum event counts reachable from ``y0``."""
    if model.loop_bound is None:
        if not model.is_acyclic():
            raise UnboundedLattice("cyclic model needs a finite loop bound")
        model = replace(model, loop_bound=1)
    y0 = np.asarray(y0, dtype=np.int64)
    B = np.zeros(model.d, dtype=np.int64)
    for c in range(model.m):
        if y0[c] > 0:
            B += y0[c] * _max_events_per_individual(model, c)
    return tuple(int(b) for b in B)


def _check_state(model, y):
    y = np.asarray(y)
    if y.shape != (model.m,):
        raise InvalidParam(f"state must have {model.m} entries, got {y.shape}")
    if np.any(y < 0) or np.any(y != np.round(y)):
        raise InvalidParam("state counts must be nonnegative integers")
    return y.astype(np.int64)


def lattice_states(model: CompartmentalModel, y0, shape) -> np.ndarray:
    """Compartment counts ``y0 + A x`` for every cell; shape ``(m, *shape)``."""
    X = np.indices(shape).reshape(len(shape), -1)
    Y = np.asarray(y0, dtype=np.int64)[:, None] + model.incidence @ X
    return Y.reshape((model.m,) + tuple(shape))


def as_birth_process(
    model: CompartmentalModel,
    y0,
    window: Sequence[int] | None = None,
    params=None,
    with_sensitivities: bool = False,
):
    """Birth process counting the events of each channel, started from ``y0``.

    ``window`` restricts the stored lattice to ``{0..window}``; rates there
    are those of the full process.  With ``with_sensitivities`` a second
    value holds the log-parameter derivatives of the rates.
    """
    y0 = _check_state(model, y0)
    full = event_bounds(model, y0)
    if window is None:
        bound = full
    else:
        bound = tuple(int(w) for w in window)
        if len(bound) != model.d or any(b < 0 for b in bound):
            raise InvalidParam("window must be a nonnegative vector with one entry per channel")
        bound = tuple(min(b, f) for b, f in zip(bound, full))
    shape = tuple(b + 1 for b in bound)
    Y = lattice_states(model, y0, shape)
    rates = model.rates(Y, params)
    cap = np.indices(shape) >= np.asarray(full).reshape((-1,) + (1,) * len(shape))
    rates = np.where(cap, 0.0, rates)
    spec = BirthProcessSpec(bound, rates, window=bound != full)
    if not with_sensitivities:
        return spec
    sens = model.rate_log_gradients(Y, params)
    sens = np.where(cap[None], 0.0, sens)
    return spec, sens


# ------------------------------------------------------------ event solutions


def _rref(rows):
    """Reduced row echelon form over the rationals; returns (matrix, pivots)."""
    A = [[Fraction(v) for v in r] for r in rows]
    nrow = len(A)
    ncol = len(A[0]) if A else 0
    pivots = []
    r = 0
    for c in range(ncol - 1):
        piv = next((i for i in range(r, nrow) if A[i][c] != 0), None)
        if piv is None:
            continue
        A[r], A[piv] = A[piv], A[r]
        lead = A[r][c]
        A[r] = [v / lead for v in A[r]]
        for i in range(nrow):
            if i != r and A[i][c] != 0:
                fac = A[i][c]
                A[i] = [a - fac * b for a, b in zip(A[i], A[r])]
        pivots.append(c)
        r += 1
        if r == nrow:
            break
    return A, pivots


def solve_events(A: np.ndarray, diff, bounds) -> list:
    """All integer ``0 <= w <= bounds`` with ``A w = diff`` (rows may be a subset)."""
    A = np.asarray(A, dtype=np.int64)
    diff = np.asarray(diff, dtype=np.int64)
    nrow, d = A.shape
    if nrow >= d and np.linalg.matrix_rank(A) == d:
        # Full column rank: at most one solution, found in closed form.
        w = np.rint(np.linalg.lstsq(A, diff, rcond=None)[0]).astype(np.int64)
        ok = np.array_equal(A @ w, diff) and np.all(w >= 0) and np.all(w <= np.asarray(bounds))
        return [tuple(int(x) for x in w)] if ok else []
    aug = [list(A[i]) + [int(diff[i])] for i in range(nrow)]
    R, pivots = _rref(aug)
    # Inconsistent system: a zero row with a nonzero right-hand side.
    for row in R:
        if all(v == 0 for v in row[:-1]) and row[-1] != 0:
            return []
    free = [c for c in range(d) if c not in pivots]
    bounds = np.asarray(bounds, dtype=np.int64)
    # Pivot values are affine in the free values; check them on the whole grid at once.
    grids = np.meshgrid(*[np.arange(bounds[c] + 1) for c in free], indexing="ij")
    F = np.stack([g.ravel() for g in grids], axis=1) if free else np.zeros((1, 0), dtype=np.int64)
    W = np.zeros((F.shape[0], d), dtype=np.int64)
    W[:, free] = F
    ok = np.ones(F.shape[0], dtype=bool)
    for r, pc in enumerate(pivots):
        row = R[r]
        rhs = float(row[-1])
        coef = np.array([float(row[c]) for c in free])
        val = rhs - F @ coef if free else np.full(1, rhs)
        iv = np.rint(val)
        ok &= (np.abs(val - iv) < 1e-9) & (iv >= 0) & (iv <= bounds[pc])
        W[:, pc] = iv.astype(np.int64)
    return sorted(tuple(int(x) for x in w) for w in W[ok])


def enumerate_event_solutions(model: CompartmentalModel, u, v) -> list:
    """Event-count vectors ``w`` taking state ``u`` to ``v`` (``A w = v - u``)."""
    u = _check_state(model, u)
    v = _check_state(model, v)
    if u.sum() != v.sum():
        return []
    return solve_events(model.incidence, v - u, event_bounds(model, u))


# --------------------------------------------------------- transition probability


@dataclass
class TransitionResult:
    probability: float
    gradient: dict | None = None
    solutions: tuple = ()
    terms_used: int = 0


def reachable_mask(spec: BirthProcessSpec) -> np.ndarray:
    """Cells reachable from the origin through positive-rate steps."""
    shape = spec.shape
    reach = np.zeros(shape, dtype=bool)
    reach[(0,) * spec.dim] = True
    for x in np.ndindex(*shape):
        if not reach[x]:
            continue
        for k in range(spec.dim):
            if x[k] < spec.bound[k] and spec.rates[(k,) + x] > 0:
                y = list(x)
                y[k] += 1
                reach[tuple(y)] = True
    return reach


def transition_probability(
    model: CompartmentalModel,
    u,
    v,
    t: float,
    cfg: InversionConfig | None = None,
    gradient: bool = False,
    params=None,
) -> TransitionResult:
    """``Pr{Y(t) = v | Y(0) = u}`` summed over event solutions.

    With ``gradient`` the derivatives with respect to the log parameters are
    returned keyed by parameter name.
    """
    cfg = cfg or InversionConfig()
    W = enumerate_event_solutions(model, u, v)
    names = model.param_names
    if not W:
        return TransitionResult(0.0, {n: 0.0 for n in names} if gradient else None, ())
    window = tuple(int(max(w[k] for w in W)) for k in range(model.d))
    if gradient:
        spec, sens = as_birth_process(model, u, window, params, with_sensitivities=True)
        res = transition_probabilities(spec, t, cfg, sensitivities=sens, names=names, cells=W)
        grad = {n: float(res.derivatives[j].sum()) for j, n in enumerate(names)}
    else:
        spec = as_birth_process(model, u, window, params)
        res = transition_probabilities(spec, t, cfg, cells=W)
        grad = None
    return TransitionResult(float(res.probabilities.sum()), grad, tuple(W), res.terms_used)


def transition_table(model: CompartmentalModel, u, t: float, cfg=None, gradient: bool = False):
    """All reachable states from ``u`` with their probabilities at time ``t``.

    Returns ``(states, probs, derivs)``: states ``(n, m)`` in first-seen
    lattice order, probabilities ``(n,)`` and, with ``gradient``, log-parameter
    derivatives ``(n, n_params)`` (otherwise ``None``).
    """
    u = _check_state(model, u)
    if gradient:
        spec, sens = as_birth_process(model, u, with_sensitivities=True)
        res = transition_probabilities(spec, t, cfg, sensitivities=sens, names=model.param_names)
    else:
        spec = as_birth_process(model, u)
        res = transition_probabilities(spec, t, cfg)
    Y = lattice_states(model, u, spec.shape).reshape(model.m, -1).T
    valid = (Y >= 0).all(axis=1)
    states, inverse = np.unique(Y[valid], axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    # Keep first-seen order so output follows the lattice sweep.
    first = np.full(len(states), len(inverse))
    np.minimum.at(first, inverse, np.arange(len(inverse)))
    order = np.argsort(first, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    slot = rank[inverse]
    probs = np.zeros(len(states))
    np.add.at(probs, slot, res.probabilities.reshape(-1)[valid])
    derivs = None
    if gradient:
        d = res.derivatives.reshape(len(model.param_names), -1)[:, valid].T
        derivs = np.zeros((len(states), d.shape[1]))
        np.add.at(derivs, slot, d)
    return states[order], probs, derivs


def transition_distribution(model: CompartmentalModel, u, t: float, cfg=None) -> dict:
    """Full distribution of ``Y(t)`` given ``Y(0) = u`` as ``{state: prob}``."""
    states, probs, _ = transition_table(model, u, t, cfg)
    return {tuple(int(c) for c in y): float(p) for y, p in zip(states, probs)}
