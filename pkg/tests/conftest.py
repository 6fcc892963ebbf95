import numpy as np
import pytest

from epibirth.io import eyam_series
from epibirth.models import builtin_model


@pytest.fixture(scope="session")
def eyam():
    return eyam_series()


@pytest.fixture(scope="session")
def eyam_sir():
    return builtin_model("sir", beta=0.0178, gamma=2.73)


def state_dict(states, probs):
    return {tuple(int(c) for c in y): float(p) for y, p in zip(states, probs)}


def compare(a: dict, b: dict):
    """Max-abs and L1 distance between two sparse distributions."""
    keys = set(a) | set(b)
    diff = np.array([abs(a.get(k, 0.0) - b.get(k, 0.0)) for k in keys])
    return float(diff.max()), float(diff.sum())


# One line per acceptance criterion, filled in by test_acceptance.py.
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
