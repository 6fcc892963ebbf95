"""Laplace-domain dynamic programming on the event lattice of a birth process.

A ``d``-dimensional birth process only ever increments its coordinates, so
the transforms ``f_{0x}(s)`` of the forward transition probabilities satisfy

    (s + sum_j lam_j(x)) f_{0x} = [x == 0] + sum_k lam_k(x - e_k) f_{0, x - e_k}

and can be filled in with a single sweep in row-major (monotone) order.  The
backward transforms ``f_{xB}`` satisfy the mirrored recursion and are filled
in reverse order.  Derivative channels obey the same linear recursion with an
extra forcing term built from the rate sensitivities.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numba
import numpy as np

from .errors import InvalidParam, InvalidTime, OverflowDomain
from .laplace import TINY_TIME, InversionConfig, _finalize, invert_adaptive


@dataclass(frozen=True)
class BirthProcessSpec:
    """Rates of a birth process tabulated on ``{0..B_1} x ... x {0..B_d}``.

    ``rates[k][x]`` is the rate of channel ``k`` at lattice state ``x``.  When
    ``window`` is false the lattice is the whole process and every channel is
    absorbing at its bound.  A window is the lower corner of a larger lattice:
    rates at its upper faces keep their true values so that the exit rates,
    and hence all probabilities inside the window, are exact.
    """

    bound: tuple
    rates: np.ndarray
    window: bool = False

    def __post_init__(self):
        bound = tuple(int(b) for b in self.bound)
        object.__setattr__(self, "bound", bound)
        if any(b < 0 for b in bound):
            raise InvalidParam("lattice bound must be nonnegative")
        rates = np.ascontiguousarray(self.rates, dtype=float)
        if rates.shape != (len(bound),) + self.shape:
            raise InvalidParam(f"rates shape {rates.shape} does not match bound {bound}")
        if not np.all(np.isfinite(rates)) or np.any(rates < 0):
            raise InvalidParam("rates must be finite and nonnegative")
        if not self.window:
            for k, b in enumerate(bound):
                edge = np.take(rates[k], b, axis=k)
                if np.any(edge != 0):
                    raise InvalidParam(f"channel {k} is not absorbing at its bound")
        object.__setattr__(self, "rates", rates)

    @property
    def dim(self) -> int:
        return len(self.bound)

    @property
    def shape(self) -> tuple:
        return tuple(b + 1 for b in self.bound)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @classmethod
    def from_function(cls, bound: Sequence[int], rate: Callable[[int, tuple], float]):
        """Tabulate ``rate(k, x)``, zeroing channel ``k`` wherever ``x_k = B_k``."""
        bound = tuple(int(b) for b in bound)
        shape = tuple(b + 1 for b in bound)
        rates = np.zeros((len(bound),) + shape)
        for x in np.ndindex(*shape):
            for k in range(len(bound)):
                if x[k] < bound[k]:
                    rates[(k,) + x] = rate(k, x)
        return cls(bound, rates)

    def total_rates(self) -> np.ndarray:
        return self.rates.sum(axis=0)


@dataclass
class LaplaceLattice:
    values: np.ndarray
    channel: str = "probability"
    s: complex | None = None


@dataclass
class TransitionLattice:
    """Inverted forward probabilities over the lattice and optional derivatives."""

    probabilities: np.ndarray
    derivatives: np.ndarray | None = None
    terms_used: int = 0
    est_error: np.ndarray | None = None
    names: tuple = field(default_factory=tuple)


def _layout(shape):
    shape = np.asarray(shape, dtype=np.int64)
    d = shape.size
    strides = np.ones(d, dtype=np.int64)
    for k in range(d - 2, -1, -1):
        strides[k] = strides[k + 1] * shape[k + 1]
    return shape, strides


def _parent_mask(shape):
    """has_parent[k, idx]: cell idx has a predecessor along channel k."""
    grids = np.indices(shape).reshape(len(shape), -1)
    return np.ascontiguousarray(grids > 0)


def _child_mask(shape):
    grids = np.indices(shape).reshape(len(shape), -1)
    return np.ascontiguousarray(grids < (np.asarray(shape)[:, None] - 1))


# The abscissa loop is innermost so that it vectorizes; the arithmetic per
# abscissa is the same sequence of operations as a cell-by-cell sweep.


@numba.njit(cache=True, nogil=True)
def _forward_kernel(rates, total, has_parent, strides, s_vals, out_idx):
    d, ncell = rates.shape
    ns = s_vals.size
    out = np.empty((ns, out_idx.size), dtype=np.complex128)
    f = np.empty((ncell, ns), dtype=np.complex128)
    acc = np.empty(ns, dtype=np.complex128)
    for idx in range(ncell):
        acc[:] = 1.0 if idx == 0 else 0.0
        for k in range(d):
            if has_parent[k, idx]:
                p = idx - strides[k]
                r = rates[k, p]
                for a in range(ns):
                    acc[a] += r * f[p, a]
        tot = total[idx]
        for a in range(ns):
            f[idx, a] = acc[a] / (s_vals[a] + tot)
    for i in range(out_idx.size):
        for a in range(ns):
            out[a, i] = f[out_idx[i], a]
    return out


@numba.njit(cache=True, nogil=True)
def _backward_kernel(rates, total, has_child, strides, s_vals, out_idx):
    d, ncell = rates.shape
    ns = s_vals.size
    out = np.empty((ns, out_idx.size), dtype=np.complex128)
    f = np.empty((ncell, ns), dtype=np.complex128)
    acc = np.empty(ns, dtype=np.complex128)
    last = ncell - 1
    for idx in range(last, -1, -1):
        acc[:] = 1.0 if idx == last else 0.0
        for k in range(d):
            if has_child[k, idx]:
                c = idx + strides[k]
                r = rates[k, idx]
                for a in range(ns):
                    acc[a] += r * f[c, a]
        tot = total[idx]
        for a in range(ns):
            f[idx, a] = acc[a] / (s_vals[a] + tot)
    for i in range(out_idx.size):
        for a in range(ns):
            out[a, i] = f[out_idx[i], a]
    return out


@numba.njit(cache=True, nogil=True)
def _forward_deriv_kernel(rates, total, sens, sens_total, has_parent, strides, s_vals, out_idx):
    d, ncell = rates.shape
    npar = sens.shape[0]
    ns = s_vals.size
    out = np.empty((ns, npar + 1, out_idx.size), dtype=np.complex128)
    f = np.empty((ncell, ns), dtype=np.complex128)
    g = np.empty((npar, ncell, ns), dtype=np.complex128)
    acc = np.empty(ns, dtype=np.complex128)
    inv = np.empty(ns, dtype=np.complex128)
    gacc = np.empty(ns, dtype=np.complex128)
    for idx in range(ncell):
        acc[:] = 1.0 if idx == 0 else 0.0
        for k in range(d):
            if has_parent[k, idx]:
                p = idx - strides[k]
                r = rates[k, p]
                for a in range(ns):
                    acc[a] += r * f[p, a]
        tot = total[idx]
        for a in range(ns):
            inv[a] = 1.0 / (s_vals[a] + tot)
            f[idx, a] = acc[a] * inv[a]
        for j in range(npar):
            gacc[:] = 0.0
            for k in range(d):
                if has_parent[k, idx]:
                    p = idx - strides[k]
                    r = rates[k, p]
                    sk = sens[j, k, p]
                    for a in range(ns):
                        gacc[a] += r * g[j, p, a] + sk * f[p, a]
            st = sens_total[j, idx]
            for a in range(ns):
                g[j, idx, a] = (gacc[a] - st * f[idx, a]) * inv[a]
    for i in range(out_idx.size):
        c = out_idx[i]
        for a in range(ns):
            out[a, 0, i] = f[c, a]
            for j in range(npar):
                out[a, j + 1, i] = g[j, c, a]
    return out


class _Prepared:
    """Flattened views of a spec shared by repeated sweeps."""

    def __init__(self, spec: BirthProcessSpec):
        self.spec = spec
        self.shape = spec.shape
        _, self.strides = _layout(self.shape)
        self.rates = np.ascontiguousarray(spec.rates.reshape(spec.dim, -1))
        self.total = np.ascontiguousarray(self.rates.sum(axis=0))
        self.has_parent = _parent_mask(self.shape)
        self._has_child = None

    @property
    def has_child(self):
        if self._has_child is None:
            self._has_child = _child_mask(self.shape)
        return self._has_child

    def out_index(self, cells):
        if cells is None:
            return np.arange(self.spec.size, dtype=np.int64)
        cells = np.atleast_2d(np.asarray(cells, dtype=np.int64))
        return np.ascontiguousarray(np.ravel_multi_index(tuple(cells.T), self.shape).astype(np.int64))


def _check(values):
    if not np.all(np.isfinite(values)):
        raise OverflowDomain("lattice sweep overflowed; rates are ill-conditioned for this s")
    return values


def _as_s_array(s):
    s_arr = np.atleast_1d(np.asarray(s, dtype=np.complex128))
    if np.any(s_arr.real <= 0):
        raise InvalidParam("abscissae must have positive real part")
    return np.ascontiguousarray(s_arr)


def forward_transforms(spec, s, cells=None, prepared=None) -> np.ndarray:
    """``f_{0x}(s_a)`` for every abscissa ``s_a``; shape ``(len(s), ncells)``."""
    p = prepared or _Prepared(spec)
    out = _forward_kernel(p.rates, p.total, p.has_parent, p.strides, _as_s_array(s), p.out_index(cells))
    return _check(out)


def backward_transforms(spec, s, cells=None, prepared=None) -> np.ndarray:
    """``f_{xB}(s_a)`` with ``B`` the upper corner of the lattice."""
    p = prepared or _Prepared(spec)
    out = _backward_kernel(p.rates, p.total, p.has_child, p.strides, _as_s_array(s), p.out_index(cells))
    return _check(out)


def _sens_arrays(spec, sensitivities):
    sens = np.asarray(sensitivities, dtype=float)
    if sens.ndim < 2 or sens.shape[1:] != (spec.dim,) + spec.shape:
        raise InvalidParam(
            f"sensitivities must have shape (n_params, {spec.dim}, *{spec.shape}), got {sens.shape}"
        )
    if not np.all(np.isfinite(sens)):
        raise InvalidParam("sensitivities must be finite")
    flat = np.ascontiguousarray(sens.reshape(sens.shape[0], spec.dim, -1))
    return flat, np.ascontiguousarray(flat.sum(axis=1))


def forward_transforms_with_derivatives(spec, sensitivities, s, cells=None, prepared=None):
    """Shape ``(len(s), 1 + n_params, ncells)``; channel 0 is the probability."""
    p = prepared or _Prepared(spec)
    sens, sens_total = _sens_arrays(spec, sensitivities)
    out = _forward_deriv_kernel(
        p.rates, p.total, sens, sens_total, p.has_parent, p.strides, _as_s_array(s), p.out_index(cells)
    )
    return _check(out)


def sweep_forward(spec: BirthProcessSpec, s: complex) -> LaplaceLattice:
    vals = forward_transforms(spec, [s])[0].reshape(spec.shape)
    return LaplaceLattice(vals, "probability", complex(s))


def sweep_backward(spec: BirthProcessSpec, s: complex) -> LaplaceLattice:
    vals = backward_transforms(spec, [s])[0].reshape(spec.shape)
    return LaplaceLattice(vals, "probability", complex(s))


def sweep_forward_with_derivatives(
    spec: BirthProcessSpec, s: complex, sensitivities, names: Sequence[str] | None = None
) -> list:
    """Probability lattice followed by one derivative lattice per parameter.

    ``sensitivities[j, k][x]`` is the derivative of ``rates[k][x]`` with respect
    to parameter ``j``.
    """
    out = forward_transforms_with_derivatives(spec, sensitivities, [s])[0]
    n = out.shape[0] - 1
    names = list(names) if names is not None else [f"d_dparam({j})" for j in range(n)]
    lattices = [LaplaceLattice(out[0].reshape(spec.shape), "probability", complex(s))]
    for j in range(n):
        lattices.append(LaplaceLattice(out[j + 1].reshape(spec.shape), names[j], complex(s)))
    return lattices


def transition_probabilities(
    spec: BirthProcessSpec,
    t: float,
    cfg: InversionConfig | None = None,
    sensitivities=None,
    names: Sequence[str] = (),
    cells=None,
) -> TransitionLattice:
    """Invert the forward sweep to ``P(X(t) = x | X(0) = 0)``.

    With ``cells`` only those lattice points are inverted (the sweep still
    covers the whole lattice).  Passing ``sensitivities`` adds derivative
    lattices, inverted without clamping.
    """
    cfg = cfg or InversionConfig()
    if not t > 0:
        raise InvalidTime(f"t must be positive, got {t}")
    prep = _Prepared(spec)
    idx = prep.out_index(cells)
    out_shape = spec.shape if cells is None else (idx.size,)
    npar = 0 if sensitivities is None else np.asarray(sensitivities).shape[0]

    if t < TINY_TIME:
        probs = (idx == 0).astype(float).reshape(out_shape)
        derivs = np.zeros((npar,) + out_shape) if npar else None
        return TransitionLattice(probs, derivs, 0, np.zeros(out_shape), tuple(names))

    if sensitivities is None:
        res = invert_adaptive(lambda s: forward_transforms(spec, s, cells, prep), t, cfg)
        return TransitionLattice(
            res.values.reshape(out_shape), None, res.terms_used, res.est_error.reshape(out_shape)
        )

    sens, sens_total = _sens_arrays(spec, sensitivities)

    def evaluate(s):
        return _check(_forward_deriv_kernel(
            prep.rates, prep.total, sens, sens_total, prep.has_parent, prep.strides, _as_s_array(s), idx
        ))

    res = invert_adaptive(evaluate, t, cfg, clamp=False)
    vals = res.values
    probs, clamped_err = _clamp_probabilities(vals[0], cfg)
    return TransitionLattice(
        probs.reshape(out_shape),
        vals[1:].reshape((npar,) + out_shape),
        res.terms_used,
        res.est_error[0].reshape(out_shape),
        tuple(names),
    )


def _clamp_probabilities(p, cfg):
    v, _, clamped = _finalize(p, np.zeros_like(p), cfg, True)
    return v, clamped


def backward_probabilities(
    spec: BirthProcessSpec, t: float, cfg: InversionConfig | None = None, cells=None
) -> np.ndarray:
    """``P(X(t) = B | X(0) = x)`` for lattice points ``x`` (all by default)."""
    cfg = cfg or InversionConfig()
    if not t > 0:
        raise InvalidTime(f"t must be positive, got {t}")
    prep = _Prepared(spec)
    idx = prep.out_index(cells)
    out_shape = spec.shape if cells is None else (idx.size,)
    if t < TINY_TIME:
        return (idx == spec.size - 1).astype(float).reshape(out_shape)
    res = invert_adaptive(lambda s: backward_transforms(spec, s, cells, prep), t, cfg)
    return res.values.reshape(out_shape)
