import itertools
from dataclasses import replace

import numpy as np
import pytest

from epibirth.errors import InvalidParam, UnboundedLattice
from epibirth.models import (
    as_birth_process,
    builtin_model,
    enumerate_event_solutions,
    event_bounds,
    lattice_states,
    transition_distribution,
    transition_probability,
    transition_table,
)
from epibirth.oracles import uniformization_probs

from conftest import compare


def test_sir_birth_rates():
    beta, gamma = 0.2, 1.3
    s0, i0 = 6, 2
    model = builtin_model("sir", beta=beta, gamma=gamma)
    spec = as_birth_process(model, (s0, i0, 0))
    assert spec.bound == (s0, s0 + i0)
    for x1, x2 in np.ndindex(*spec.shape):
        inf = max(i0 + x1 - x2, 0)
        si = beta * max(s0 - x1, 0) * inf if x1 < s0 else 0.0
        ir = gamma * inf if x2 < s0 + i0 else 0.0
        assert spec.rates[0, x1, x2] == pytest.approx(si, rel=1e-15)
        assert spec.rates[1, x1, x2] == pytest.approx(ir, rel=1e-15)


def test_seir_birth_rates():
    beta, kappa, gamma = 0.1, 0.8, 1.5
    y0 = (4, 1, 2, 0)
    model = builtin_model("seir", beta=beta, kappa=kappa, gamma=gamma)
    spec = as_birth_process(model, y0)
    s0, e0, i0, _ = y0
    Y = lattice_states(model, y0, spec.shape)
    for x in np.ndindex(*spec.shape):
        if Y[(slice(None),) + x].min() < 0:
            continue  # not a state; every rate is zero there
        x1, x2, x3 = x
        expect = (
            beta * max(s0 - x1, 0) * max(i0 + x2 - x3, 0),
            kappa * max(e0 + x1 - x2, 0),
            gamma * max(i0 + x2 - x3, 0),
        )
        for k in range(3):
            if x[k] < spec.bound[k]:
                assert spec.rates[(k,) + x] == pytest.approx(expect[k], rel=1e-15)


def test_sirs_loop_bound():
    model = builtin_model("sirs", beta=1.0, gamma=1.0, nu=0.5, loop_bound=2)
    B = event_bounds(model, (3, 1, 0))
    # Within the crude bound 2 * 4 per channel, tightened by per-individual walks.
    assert all(b <= 8 for b in B)
    assert B == (7, 8, 5)
    spec = as_birth_process(model, (3, 1, 0))
    Y = lattice_states(model, (3, 1, 0), spec.shape)
    x3 = np.indices(spec.shape)[2]
    rs = np.where(x3 < B[2], 0.5 * np.maximum(Y[2], 0), 0.0)
    rs = np.where((Y >= 0).all(axis=0), rs, 0.0)
    assert np.allclose(spec.rates[2], rs)


def test_cyclic_model_needs_loop_bound():
    model = builtin_model("sirs", beta=1.0, gamma=1.0, nu=0.5)
    with pytest.raises(UnboundedLattice):
        event_bounds(replace(model, loop_bound=None), (3, 1, 0))


def test_event_solutions():
    sir = builtin_model("sir", beta=1.0, gamma=1.0)
    assert enumerate_event_solutions(sir, (7, 1, 0), (5, 2, 1)) == [(2, 1)]
    assert enumerate_event_solutions(sir, (7, 1, 0), (7, 1, 0)) == [(0, 0)]
    assert enumerate_event_solutions(sir, (7, 1, 0), (8, 0, 0)) == []
    sirs = builtin_model("sirs", beta=1.0, gamma=1.0, nu=1.0)
    assert enumerate_event_solutions(sirs, (3, 1, 0), (3, 1, 0)) == [(0, 0, 0), (1, 1, 1)]


def test_event_solutions_exhaustive():
    sirs = builtin_model("sirs", beta=1.0, gamma=1.0, nu=1.0, loop_bound=2)
    u, v = np.array([3, 1, 0]), np.array([2, 1, 1])
    B = event_bounds(sirs, u)
    brute = [w for w in itertools.product(*(range(b + 1) for b in B)) if np.array_equal(u + sirs.incidence @ w, v)]
    assert enumerate_event_solutions(sirs, u, v) == sorted(brute)


def test_sir_metadata():
    model = builtin_model("sir", beta=0.0178, gamma=2.73)
    assert model.d == 2 and model.loop_bound == 1
    assert model.param_names == ("beta", "gamma")


def test_general_sir_reduces_to_sir():
    gen = builtin_model("general_sir", beta=0.3, gamma=1.2, alpha=1.0, omega=1.0, eta=1.0)
    sir = builtin_model("sir", beta=0.3, gamma=1.2)
    S, I = np.meshgrid(np.arange(51), np.arange(51), indexing="ij")
    Y = np.stack([S, I, np.zeros_like(S)])
    assert np.array_equal(gen.rates(Y), sir.rates(Y))


def test_sirs_without_loss_of_immunity_matches_sir():
    sirs = builtin_model("sirs", beta=0.4, gamma=1.0, nu=0.0)
    sir = builtin_model("sir", beta=0.4, gamma=1.0)
    u = (5, 2, 0)
    a = transition_distribution(sirs, u, 0.8)
    b = transition_distribution(sir, u, 0.8)
    assert compare(a, b)[0] < 1e-10


def test_no_infectives_is_frozen():
    model = builtin_model("sir", beta=0.7, gamma=2.0)
    assert transition_probability(model, (10, 0, 3), (10, 0, 3), 2.0).probability == pytest.approx(1.0, abs=1e-12)
    assert transition_probability(model, (10, 0, 3), (9, 1, 3), 2.0).probability == pytest.approx(0.0, abs=1e-12)


def test_eyam_scale_entries_against_uniformization():
    model = builtin_model("sir", beta=0.0178, gamma=2.73)
    u = (254, 7, 0)
    ref = uniformization_probs(model, u, 0.5)
    rng = np.random.default_rng(0)
    big = sorted(ref, key=ref.get, reverse=True)[:5]
    picks = big + [list(ref)[i] for i in rng.choice(len(ref), 5, replace=False)]
    for v in picks:
        p = transition_probability(model, u, v, 0.5).probability
        assert abs(p - ref[v]) < 1e-8


@pytest.mark.parametrize(
    "kind,params,u,t",
    [
        ("sir", dict(beta=0.0178, gamma=2.73), (100, 1, 0), 1.0),
        ("sir", dict(beta=0.3, gamma=1.0), (12, 3, 1), 0.5),
        ("sir", dict(beta=0.05, gamma=0.5), (40, 5, 0), 2.0),
        ("seir", dict(beta=0.2, kappa=1.0, gamma=0.7), (8, 1, 1, 0), 0.7),
        ("seir", dict(beta=0.05, kappa=2.0, gamma=1.5), (15, 0, 2, 0), 1.0),
        ("seir", dict(beta=0.5, kappa=0.3, gamma=0.2), (5, 2, 0, 1), 2.5),
        ("sirs", dict(beta=0.5, gamma=1.0, nu=0.8), (3, 1, 0), 0.6),
        ("sirs", dict(beta=0.2, gamma=0.4, nu=0.3), (5, 2, 1), 1.0),
        ("sirs", dict(beta=1.0, gamma=2.0, nu=2.0), (2, 2, 0), 0.3),
    ],
)
def test_normalization(kind, params, u, t):
    _, probs, _ = transition_table(builtin_model(kind, params), u, t)
    assert abs(probs.sum() - 1.0) < 1e-8


def test_chapman_kolmogorov():
    model = builtin_model("sir", beta=0.15, gamma=0.9)
    u = (10, 2, 0)
    direct = transition_distribution(model, u, 0.9)
    first = transition_distribution(model, u, 0.4)
    composed: dict = {}
    for mid, p in first.items():
        if p < 1e-15:
            continue
        for v, q in transition_distribution(model, mid, 0.5).items():
            composed[v] = composed.get(v, 0.0) + p * q
    assert compare(direct, composed)[0] < 1e-9


def test_full_matrix_gradients_sum_to_zero():
    model = builtin_model("sir", beta=0.02, gamma=1.5)
    _, probs, derivs = transition_table(model, (30, 2, 0), 0.7, gradient=True)
    assert np.abs(derivs.sum(axis=0)).max() < 1e-7


def test_model_validation():
    with pytest.raises(InvalidParam):
        builtin_model("sir", beta=0.1)
    with pytest.raises(InvalidParam):
        builtin_model("sir", beta=-0.1, gamma=1.0)
    with pytest.raises(InvalidParam):
        builtin_model("sird", beta=0.1, gamma=1.0)
    with pytest.raises(InvalidParam):
        transition_probability(builtin_model("sir", beta=0.1, gamma=1.0), (3, -1, 0), (3, 0, 0), 1.0)
