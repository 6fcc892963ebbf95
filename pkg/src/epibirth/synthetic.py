"""Simulated multi-unit surveillance data with a known change in R0."""

from __future__ import annotations

import numpy as np

from .hierarchical import unit_model
from .likelihood import ObservationSeries
from .oracles import gillespie_simulate

DEFAULT_DELTAS = (0.5, 0.5, 0.5, 1.0, 1.0, 1.0)


def synthetic_units(
    seed: int = 20240601,
    deltas=DEFAULT_DELTAS,
    population: int = 300,
    i0: int = 10,
    r0: float = 2.0,
    gamma: float = 0.5,
    t0: float = 4.0,
    times=None,
    max_tries: int = 100,
) -> list:
    """Gillespie-simulated units observed through their susceptible counts.

    The first row of each series is fully observed; later rows report only
    ``S`` (cumulative infections) with ``I`` and ``R`` missing.  Paths whose
    outbreak dies out before ``t0`` are redrawn from the same stream.
    """
    times = np.arange(0.0, 12.25, 0.5) if times is None else np.asarray(times, dtype=float)
    streams = np.random.SeedSequence(seed).spawn(len(deltas))
    units = []
    for p, (delta, ss) in enumerate(zip(deltas, streams)):
        rng = np.random.default_rng(ss)
        model = unit_model(np.log([r0, delta, gamma]), population, t0)
        y0 = np.array([population - i0, i0, 0])
        for _ in range(max_tries):
            path = gillespie_simulate(model, y0, float(times[-1]), seed=rng)
            if path.state_at(t0)[1] > 0:
                break
        counts = np.array([path.state_at(t) for t in times], dtype=float)
        counts[1:, 1:] = np.nan
        units.append(
            ObservationSeries(times, counts, ("S", "I", "R"), total=population, unit="week", name=f"unit{p + 1}")
        )
    return units
