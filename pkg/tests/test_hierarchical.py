import math

import numpy as np
import pytest
from scipy.special import gammaincc

from epibirth.errors import InvalidParam
from epibirth.hierarchical import (
    HierConfig,
    _Unit,
    hierarchical_gibbs,
    r0_paths,
    unit_model,
    update_hyperparameters,
)
from epibirth.laplace import InversionConfig
from epibirth.likelihood import ObservationSeries, loglik
from epibirth.oracles import gillespie_simulate, uniformization_probs
from epibirth.samplers import rw_metropolis_sample
from epibirth.synthetic import synthetic_units

NAN = np.nan


def small_unit_series():
    counts = [[18, 2, 0], [15, NAN, NAN], [13, 3, 4]]
    return ObservationSeries([0.0, 1.0, 2.0], counts, ("S", "I", "R"), total=20)


def test_latent_draws_follow_exact_conditional():
    theta = np.log([2.0, 0.7, 1.0])
    unit = _Unit(small_unit_series(), 1.0, InversionConfig())
    model = unit_model(theta, 20, 1.0)
    # Independent weights: forward then backward transition via uniformization.
    support = np.arange(0, 5)
    fwd = uniformization_probs(model.with_params(**model.params_at(0.0)), (18, 2, 0), 1.0)
    bwd_model = model.with_params(**model.params_at(1.0))
    w = np.array([
        fwd.get((15, 5 - r, r), 0.0) * uniformization_probs(bwd_model, (15, 5 - r, r), 1.0).get((13, 3, 4), 0.0)
        for r in support
    ])
    w /= w.sum()
    got_support, got = unit.conditional(theta, np.array([0, 2, 4]), 1)
    assert np.array_equal(got_support, support)
    assert np.allclose(got, w, atol=1e-8)

    rng = np.random.default_rng(8)
    n = 10_000
    draws = np.array([unit.update_latent(theta, np.array([0, 2, 4]), rng)[1] for _ in range(n)])
    for r, p in zip(support, w):
        se = math.sqrt(p * (1 - p) / n)
        assert abs(np.mean(draws == r) - p) <= 4 * se + 1e-12


def test_conjugate_mean_update():
    rng = np.random.default_rng(1)
    theta = rng.normal(0.5, 0.3, size=(10, 3))
    sigma2 = np.array([0.2, 0.5, 1.0])
    n = 20_000
    mus = np.array([update_hyperparameters(theta, np.zeros(3), sigma2, rng)[0] for _ in range(n)])
    prec = 10 / sigma2 + 1 / 100.0
    mean = theta.sum(axis=0) / sigma2 / prec
    assert np.all(np.abs(mus.mean(axis=0) - mean) < 4 * np.sqrt(1 / prec / n))
    assert np.allclose(mus.var(axis=0), 1 / prec, rtol=0.05)


def test_conjugate_variance_update():
    rng = np.random.default_rng(2)
    P = 10
    theta = rng.normal(0.0, 0.7, size=(P, 3))
    n = 20_000
    shape = 1e-3 + P / 2
    g = np.empty((n, 3))
    for i in range(n):
        mu, s2 = update_hyperparameters(theta, np.zeros(3), np.ones(3), rng)
        rate = 1e-3 + 0.5 * ((theta - mu) ** 2).sum(axis=0)
        g[i] = rate / s2  # Gamma(shape, 1) under the conditional
    assert np.all(np.abs(g.mean(axis=0) - shape) < 4 * math.sqrt(shape / n))
    assert np.allclose(g.var(axis=0), shape, rtol=0.05)


def test_hyperprior_only_run():
    n = 20_000
    chain = hierarchical_gibbs([], HierConfig(t0=1.0, iterations=n, burn_in=0, seed=3))
    mu = chain.draws[:, :3]
    assert np.all(np.abs(mu.mean(axis=0)) < 4 * 10 / math.sqrt(n))
    assert np.allclose(mu.var(axis=0), 100.0, rtol=0.05)
    # InverseGamma(1e-3, 1e-3) has no moments; compare its CDF on the log scale.
    log_s2 = np.log(chain.draws[:, 3:])
    for x in (-5.0, 0.0, 100.0, 500.0):
        p = gammaincc(1e-3, 1e-3 * math.exp(-x))
        se = math.sqrt(p * (1 - p) / n)
        assert np.all(np.abs((log_s2 <= x).mean(axis=0) - p) < 4 * se)


def observed_unit(seed=5):
    theta = np.log([2.0, 0.6, 1.0])
    model = unit_model(theta, 40, 3.0)
    rng = np.random.default_rng(seed)
    while True:
        path = gillespie_simulate(model, (36, 4, 0), 6.0, seed=rng)
        if path.state_at(3.0)[1] > 0:
            break
    times = np.arange(7.0)
    counts = np.array([path.state_at(t) for t in times], dtype=float)
    return ObservationSeries(times, counts, ("S", "I", "R"), total=40)


@pytest.mark.slow
def test_observed_removals_reduce_to_random_walk():
    series = observed_unit()
    prior_mu, prior_s2 = np.array([0.5, 0.0, 0.0]), np.array([1.0, 1.0, 1.0])
    cfg = HierConfig(
        t0=3.0, iterations=6000, burn_in=500, seed=6, proposal_scale=(0.3, 0.3, 0.3),
        update_hyper=False, init_mu=tuple(prior_mu), init_sigma2=tuple(prior_s2),
    )
    hier = hierarchical_gibbs([series], cfg)

    def target(q):
        ll = loglik(unit_model(q, 40, 3.0), series).loglik
        return ll - 0.5 * float(np.sum((q - prior_mu) ** 2 / prior_s2))

    rwm = rw_metropolis_sample(target, 0.3, 6000, 7, prior_mu, burn_in=500)
    for j in range(3):
        a, b = hier.draws[:, j], rwm.draws[:, j]
        se = math.sqrt(a.var() / hier.ess[j] + b.var() / rwm.ess[j])
        assert abs(a.mean() - b.mean()) < 4 * se


def test_threads_do_not_change_results():
    units = synthetic_units(seed=4, deltas=(0.5, 1.0), population=30, i0=3, times=np.arange(0.0, 5.0))
    base = dict(t0=2.0, iterations=8, burn_in=2, seed=11)
    one = hierarchical_gibbs(units, HierConfig(**base, threads=1))
    two = hierarchical_gibbs(units, HierConfig(**base, threads=2))
    assert np.array_equal(one.draws, two.draws)
    again = hierarchical_gibbs(units, HierConfig(**base, threads=1))
    assert np.array_equal(one.draws, again.draws)
    assert one.names[:3] == ("r0[0]", "delta[0]", "gamma[0]")
    assert len(one.extras["prob_delta_below_one"]) == 2
    for (times, path), u in zip(r0_paths(one), units):
        assert np.array_equal(times, u.times)
        assert np.all(path > 0)


def test_unit_validation():
    good = small_unit_series()
    no_total = ObservationSeries(good.times, good.counts, good.labels)
    with pytest.raises(InvalidParam):
        hierarchical_gibbs([no_total], HierConfig(t0=1.0, iterations=2, burn_in=0))
    with pytest.raises(InvalidParam):
        hierarchical_gibbs([good], HierConfig(t0=1.5, iterations=2, burn_in=0))
    hidden_s = ObservationSeries(good.times, [[18, 2, 0], [NAN, NAN, NAN], [13, 3, 4]], good.labels, 20)
    with pytest.raises(InvalidParam):
        hierarchical_gibbs([hidden_s], HierConfig(t0=1.0, iterations=2, burn_in=0))
    with pytest.raises(InvalidParam):
        HierConfig(t0=1.0, proposal_scale=(0.1, 0.1))


def test_synthetic_units():
    a = synthetic_units(seed=1, population=50, i0=3)
    b = synthetic_units(seed=1, population=50, i0=3)
    assert len(a) == 6
    for u, v in zip(a, b):
        assert u == v
        assert u.total == 50
        assert not np.isnan(u.counts[0]).any()
        assert np.isnan(u.counts[1:, 1:]).all()
        assert np.all(np.diff(u.counts[:, 0]) <= 0)
