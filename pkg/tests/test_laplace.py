import math

import mpmath
import numpy as np
import pytest

from epibirth.errors import InvalidParam, InvalidTime, NonConvergence
from epibirth.laplace import (
    InversionConfig,
    abscissae,
    discretization_bound,
    invert_at,
    invert_grid,
    min_precision_for,
)


def test_exponential_survival():
    rep = invert_at(lambda s: 1 / (s + 2.73), 1.0)
    assert abs(rep.value - math.exp(-2.73)) < 1e-8
    # e^-2.73 to seven places
    assert abs(rep.value - 0.0652193) < 1e-7


def test_constant_function():
    rep = invert_at(lambda s: 1 / s, 5.0)
    assert abs(rep.value - 1.0) < 1e-10


def test_convolution_of_exponentials():
    a, t = 1.5, 2.0
    rep = invert_at(lambda s: 1 / (s + a) ** 2, t)
    assert abs(rep.value - t * math.exp(-a * t)) < 1e-9
    assert abs(rep.value - 0.099574) < 1e-6


def test_against_mpmath_talbot():
    # Independent inversion by a different contour method in high precision.
    f = lambda s: 3.0 / ((s + 1) * (s + 4))
    for t in (0.3, 1.0, 2.5):
        ref = float(mpmath.invertlaplace(lambda s: 3 / ((s + 1) * (s + 4)), t, method="talbot"))
        assert abs(invert_at(f, t).value - ref) < 1e-9


def test_abscissae_are_exact():
    t, M = 0.7, 20.0
    s = abscissae(t, 5, M)
    for k in range(5):
        expected = complex(M / (2 * t), 2 * math.pi * k / (2 * t))
        assert s[k] == expected
    assert np.array_equal(abscissae(t, 3, M, start=2), s[2:])


def test_discretization_bound_and_precision():
    assert discretization_bound(20) == pytest.approx(1 / (math.exp(20) - 1))
    M = min_precision_for(1e-8)
    assert discretization_bound(M) == pytest.approx(1e-8, rel=1e-6)
    assert InversionConfig().discretization_bound < 3e-9


def test_single_point_grid_matches_invert_at():
    lam, t = 1.7, 0.8
    cfg = InversionConfig()
    s = abscissae(t, 400, cfg.M)
    grid = invert_grid((1 / (s + lam)).reshape(-1, 1), t, cfg)
    assert grid[0].value == pytest.approx(invert_at(lambda z: 1 / (z + lam), t, cfg).value, abs=1e-12)


def test_zero_grid():
    s = abscissae(1.0, 64)
    grid = invert_grid(np.zeros((64, 3), dtype=complex), 1.0)
    assert np.all(grid.values == 0)
    assert not grid.clamped.any()


@pytest.mark.parametrize("accel", ["levin_u", "euler"])
def test_accelerations_agree(accel):
    cfg = InversionConfig(acceleration=accel, max_terms=4000)
    rep = invert_at(lambda s: 2 / (s + 2), 0.6, cfg)
    assert abs(rep.value - 2 * math.exp(-1.2)) < 1e-8


def test_non_convergence_reported():
    cfg = InversionConfig(acceleration="none", max_terms=40, min_terms=12)
    with pytest.raises(NonConvergence):
        invert_at(lambda s: 1 / (s + 1), 1.0, cfg)


def test_bad_time_and_config():
    with pytest.raises(InvalidTime):
        invert_at(lambda s: 1 / s, 0.0)
    with pytest.raises(InvalidTime):
        invert_at(lambda s: 1 / s, -1.0)
    with pytest.raises(InvalidParam):
        InversionConfig(M=0)
    with pytest.raises(InvalidParam):
        InversionConfig(acceleration="wynn")


def test_tiny_time_limit():
    rep = invert_at(lambda s: 1 / (s + 3), 1e-14)
    assert rep.value == pytest.approx(1.0, abs=1e-12)
