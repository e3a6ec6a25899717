import numpy as np
import pytest

from pvscreen.data import Dataset

STRATA = [(a, s, t) for a in (0, 1) for s in (0, 1) for t in (0, 1)]


def make_dataset(events, n_at_risk=100_000):
    """Dataset with 8 strata per drug; ``events`` is (N, 8) in STRATA order."""
    events = np.atleast_2d(np.asarray(events))
    n = events.shape[0]
    m = np.broadcast_to(np.asarray(n_at_risk), events.shape)
    drug, age, sex, time = [], [], [], []
    for i in range(n):
        for a, s, t in STRATA:
            drug.append(i)
            age.append(a)
            sex.append(s)
            time.append(t)
    return Dataset.from_arrays(drug, age, sex, time, m.ravel(), events.ravel(), n_drugs=n)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def five_drugs():
    rng = np.random.default_rng(5)
    base = np.array([8, 8, 12, 12, 10, 10, 14, 14])
    events = rng.poisson(base, size=(5, 8))
    events[0, 1::2] = rng.poisson(3 * base[1::2])  # strong signal in the post windows
    return make_dataset(events)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
