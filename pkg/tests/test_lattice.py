import numpy as np
import pytest
from scipy.stats import poisson

from epibirth.errors import InvalidParam, InvalidTime
from epibirth.lattice import (
    BirthProcessSpec,
    backward_probabilities,
    sweep_backward,
    sweep_forward,
    sweep_forward_with_derivatives,
    transition_probabilities,
)
from epibirth.models import as_birth_process, builtin_model
from epibirth.oracles import path_sum_transform, uniformization_event_probs

S = 1.3 + 0.7j


def reference_forward(rates, s):
    """Plain Python recursion visiting cells in reversed-lexicographic-sum order."""
    d = rates.shape[0]
    shape = rates.shape[1:]
    total = rates.sum(axis=0)
    f = np.zeros(shape, dtype=complex)
    cells = sorted(np.ndindex(*shape), key=lambda x: (sum(x), tuple(-v for v in x)))
    for x in cells:
        acc = 1.0 if sum(x) == 0 else 0.0
        for k in range(d):
            if x[k] > 0:
                p = x[:k] + (x[k] - 1,) + x[k + 1:]
                acc += rates[(k,) + p] * f[p]
        f[x] = acc / (s + total[x])
    return f


def sir_spec(s0, i0, beta, gamma, sens=False):
    return as_birth_process(builtin_model("sir", beta=beta, gamma=gamma), (s0, i0, 0), with_sensitivities=sens)


def test_origin_value():
    spec = sir_spec(6, 2, 0.3, 1.1)
    f = sweep_forward(spec, S).values
    assert f[0, 0] == pytest.approx(1 / (S + spec.rates[:, 0, 0].sum()), rel=1e-14)


def test_one_dimensional_pure_birth():
    lam = np.array([0.5, 1.2, 2.0, 0.7, 0.0])
    spec = BirthProcessSpec((4,), lam[None, :])
    f = sweep_forward(spec, S).values
    for n in range(5):
        expected = np.prod([lam[i] / (S + lam[i]) for i in range(n)]) / (S + lam[n])
        assert f[n] == pytest.approx(expected, rel=1e-13)


def test_matches_path_enumeration():
    spec = BirthProcessSpec.from_function((2, 2), lambda k, x: 1.0)
    f = sweep_forward(spec, S).values
    for x in np.ndindex(3, 3):
        assert f[x] == pytest.approx(path_sum_transform(spec.rates, S, x), rel=1e-13)


def test_matches_path_enumeration_irregular_rates():
    rng = np.random.default_rng(3)
    spec = BirthProcessSpec.from_function((3, 2, 2), lambda k, x: rng.uniform(0.1, 3))
    f = sweep_forward(spec, S).values
    for x in np.ndindex(*spec.shape):
        assert f[x] == pytest.approx(path_sum_transform(spec.rates, S, x), rel=1e-12)


def test_sweep_order_independent():
    spec = sir_spec(9, 3, 0.2, 0.9)
    assert np.allclose(sweep_forward(spec, S).values, reference_forward(spec.rates, S), rtol=1e-13, atol=0)


def test_backward_absorbing_corner():
    spec = BirthProcessSpec.from_function((2, 3), lambda k, x: 0.5 + x[0])
    g = sweep_backward(spec, S).values
    assert g[2, 3] == pytest.approx(1 / S, rel=1e-14)


def test_backward_one_dimensional():
    lam = np.array([0.5, 1.2, 2.0, 0.0])
    spec = BirthProcessSpec((3,), lam[None, :])
    g = sweep_backward(spec, S).values
    for x in range(4):
        expected = np.prod([lam[i] / (S + lam[i]) for i in range(x, 3)]) / S
        assert g[x] == pytest.approx(expected, rel=1e-13)


def test_backward_corner_equals_forward_corner():
    spec = sir_spec(5, 2, 0.4, 1.0)
    f = sweep_forward(spec, S).values
    g = sweep_backward(spec, S).values
    corner = tuple(b for b in spec.bound)
    assert g[0, 0] == pytest.approx(f[corner], rel=1e-12)


def test_beta_derivative_at_origin():
    s0, i0, beta, gamma = 7, 2, 0.3, 1.1
    spec, sens = sir_spec(s0, i0, beta, gamma, sens=True)
    # log-scale sensitivities divided by beta give d rate / d beta
    lats = sweep_forward_with_derivatives(spec, S, sens[:1] / beta, names=["beta"])
    f00 = lats[0].values[0, 0]
    expected = -s0 * i0 * f00 / (S + beta * s0 * i0 + gamma * i0)
    assert lats[1].values[0, 0] == pytest.approx(expected, rel=1e-13)
    assert lats[1].channel == "beta"


def test_zero_sensitivities():
    spec = sir_spec(5, 2, 0.3, 1.0)
    lats = sweep_forward_with_derivatives(spec, S, np.zeros((2, 2) + spec.shape))
    assert np.all(lats[1].values == 0) and np.all(lats[2].values == 0)


def test_inverted_beta_derivative_matches_finite_difference():
    s0, i0, beta, gamma, t = 5, 2, 0.3, 1.0, 0.4
    spec, sens = sir_spec(s0, i0, beta, gamma, sens=True)
    res = transition_probabilities(spec, t, sensitivities=sens[:1] / beta, names=("beta",))
    h = 1e-5 * beta
    hi = transition_probabilities(sir_spec(s0, i0, beta + h, gamma), t).probabilities
    lo = transition_probabilities(sir_spec(s0, i0, beta - h, gamma), t).probabilities
    fd = (hi - lo) / (2 * h)
    big = np.abs(fd) > 1e-6
    rel = np.abs(res.derivatives[0][big] - fd[big]) / np.abs(fd[big])
    assert rel.max() < 1e-4


def test_frozen_process():
    spec = BirthProcessSpec((2, 2), np.zeros((2, 3, 3)))
    p = transition_probabilities(spec, 1.5).probabilities
    assert p[0, 0] == pytest.approx(1.0, abs=1e-12)
    assert np.abs(p).sum() - p[0, 0] < 1e-12


def test_poisson_law():
    B = 30
    rates = np.full((1, B + 1), 2.0)
    rates[0, B] = 0.0
    p = transition_probabilities(BirthProcessSpec((B,), rates), 1.0).probabilities
    k = np.arange(11)
    assert np.max(np.abs(p[:11] - poisson.pmf(k, 2.0))) < 1e-9


def test_sir_lattice_against_uniformization():
    model = builtin_model("sir", beta=0.0178, gamma=2.73)
    spec = as_birth_process(model, (100, 1, 0))
    p = transition_probabilities(spec, 1.0).probabilities
    ref = uniformization_event_probs(model, (100, 1, 0), 1.0)
    dense = np.zeros(spec.shape)
    for x, v in ref.items():
        dense[x] = v
    assert np.abs(p - dense).sum() < 1e-8


def test_backward_probabilities_against_uniformization():
    model = builtin_model("sir", beta=0.3, gamma=1.0)
    u = (4, 2, 0)
    spec = as_birth_process(model, u, window=(2, 3))
    back = backward_probabilities(spec, 0.7)
    A = model.incidence
    for x in np.ndindex(*spec.shape):
        start = np.asarray(u) + A @ np.asarray(x)
        if start.min() < 0:
            continue
        rest = tuple(np.subtract((2, 3), x))
        if min(rest) < 0:
            continue
        ref = uniformization_event_probs(model, start, 0.7).get(rest, 0.0)
        assert back[x] == pytest.approx(ref, abs=1e-9)


def test_partial_cells():
    spec = sir_spec(6, 2, 0.3, 1.0)
    full = transition_probabilities(spec, 0.5).probabilities
    cells = [(0, 0), (3, 2), (6, 8)]
    part = transition_probabilities(spec, 0.5, cells=cells).probabilities
    assert np.allclose(part, [full[c] for c in cells], atol=1e-14)


def test_birth_process_spec_validation():
    with pytest.raises(InvalidParam):
        BirthProcessSpec((2,), np.ones((1, 3)))  # not absorbing at the bound
    with pytest.raises(InvalidParam):
        BirthProcessSpec((2,), -np.ones((1, 3)))
    with pytest.raises(InvalidTime):
        transition_probabilities(sir_spec(3, 1, 1, 1), 0.0)
