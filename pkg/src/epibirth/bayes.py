"""Savage-Dickey density ratios for nested point restrictions."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import InvalidParam, UnstableEstimate

MIN_NEAR_DRAWS = 50


def normal_density_at(point=0.0, mean=0.0, sd=100.0, dims: int = 1) -> float:
    """Density of independent Normal(mean, sd^2) coordinates at ``point``."""
    z = (point - mean) / sd
    return float((math.exp(-0.5 * z * z) / (sd * math.sqrt(2 * math.pi))) ** dims)


def silverman_bandwidth(x: np.ndarray) -> np.ndarray:
    """Per-coordinate normal-reference bandwidth ``sd * (n (d+2) / 4)^(-1/(d+4))``."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n, d = x.shape
    return x.std(axis=0, ddof=1) * (n * (d + 2) / 4.0) ** (-1.0 / (d + 4))


@dataclass(frozen=True)
class SavageDickeyResult:
    log10_bf: float
    log10_posterior_density: float
    prior_density: float
    bandwidth: tuple
    n_near: int
    unstable: bool


def savage_dickey(draws, prior_density_at_0: float, point=0.0) -> SavageDickeyResult:
    """``log10 B01`` for the restriction ``theta = point``.

    ``draws`` holds posterior samples of the restricted coordinates (one
    column per coordinate; joint restrictions use a product Gaussian kernel).
    The posterior density at the point is a kernel density estimate with
    normal-reference bandwidths.  A warning is issued, not an error, when
    fewer than 50 draws fall within three bandwidths of the point.
    """
    x = np.asarray(draws, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] < 2:
        raise InvalidParam("need at least two draws")
    if not prior_density_at_0 > 0:
        raise InvalidParam("prior density at the restriction point must be positive")
    pt = np.broadcast_to(np.asarray(point, dtype=float), (x.shape[1],))
    h = silverman_bandwidth(x)
    if np.any(h <= 0):
        raise InvalidParam("draws have zero spread in some coordinate")
    z = (x - pt) / h
    log_k = -0.5 * np.sum(z * z, axis=1) - np.sum(np.log(h)) - 0.5 * x.shape[1] * math.log(2 * math.pi)
    log_post = logsumexp(log_k) - math.log(x.shape[0])
    near = int(np.sum(np.all(np.abs(z) <= 3.0, axis=1)))
    unstable = near < MIN_NEAR_DRAWS
    if unstable:
        warnings.warn(
            f"only {near} draws lie within 3 bandwidths of the restriction point; "
            "the density estimate there is unreliable",
            UnstableEstimate,
            stacklevel=2,
        )
    log10_post = log_post / math.log(10)
    return SavageDickeyResult(
        log10_post - math.log10(prior_density_at_0),
        log10_post,
        float(prior_density_at_0),
        tuple(float(v) for v in h),
        near,
        unstable,
    )
