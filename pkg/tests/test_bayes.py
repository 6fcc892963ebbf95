import math
import warnings

import numpy as np
import pytest
from scipy.stats import multivariate_normal

from epibirth.bayes import normal_density_at, savage_dickey, silverman_bandwidth
from epibirth.errors import InvalidParam, UnstableEstimate


def test_prior_density_at_zero():
    assert normal_density_at() == pytest.approx(0.0039894, abs=5e-8)
    assert normal_density_at(dims=3) == pytest.approx(0.0039894228**3, rel=1e-7)


def test_prior_draws_give_unit_bayes_factor():
    rng = np.random.default_rng(0)
    draws = rng.normal(0.0, 100.0, size=50_000)
    res = savage_dickey(draws, normal_density_at())
    assert abs(res.log10_bf) < 0.05
    assert not res.unstable


def test_joint_restriction_matches_product_density():
    rng = np.random.default_rng(1)
    cov = np.diag([0.04, 0.09])
    draws = rng.multivariate_normal([0.3, -0.2], cov, size=100_000)
    res = savage_dickey(draws, normal_density_at(dims=2))
    exact = multivariate_normal([0.3, -0.2], cov).pdf([0.0, 0.0])
    # KDE smooths the density, so only the leading digits are expected to agree.
    assert res.log10_posterior_density == pytest.approx(math.log10(exact), abs=0.03)
    assert len(res.bandwidth) == 2


def test_far_point_is_flagged():
    rng = np.random.default_rng(2)
    draws = rng.normal(5.0, 0.1, size=5000)
    with pytest.warns(UnstableEstimate):
        res = savage_dickey(draws, normal_density_at())
    assert res.unstable and res.n_near < 50


def test_bandwidth_rule():
    x = np.random.default_rng(3).standard_normal((1000, 1))
    h = silverman_bandwidth(x)
    assert h[0] == pytest.approx(x.std(ddof=1) * (1000 * 3 / 4) ** (-0.2))


def test_validation():
    with pytest.raises(InvalidParam):
        savage_dickey([1.0], 0.1)
    with pytest.raises(InvalidParam):
        savage_dickey([1.0, 2.0], 0.0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        with pytest.raises(InvalidParam):
            savage_dickey([1.0, 1.0, 1.0], 0.1)
