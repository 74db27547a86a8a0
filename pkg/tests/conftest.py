from datetime import date

import numpy as np
import pytest

from movement_rhythms.simulator import CohortConfig, simulate_cohort


@pytest.fixture(scope="session")
def small_cohort():
    cfg = CohortConfig(n_participants=24, start=date(2021, 9, 1), end=date(2021, 12, 31), seed=11)
    return simulate_cohort(cfg)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_simplex(rng, k, n=None):
    """Random proportion vectors, some with exact zeros."""
    shape = (k,) if n is None else (n, k)
    x = rng.exponential(size=shape)
    mask = rng.random(shape) < 0.15
    x[mask] = 0.0
    x = np.where(x.sum(axis=-1, keepdims=True) == 0, 1.0, x)
    return x / x.sum(axis=-1, keepdims=True)


_RESULTS = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def criterion(request):
    """Record one acceptance criterion outcome and fail the test if it did not pass."""
    log = request.config.stash.setdefault(_RESULTS, [])

    def check(name, passed, detail=""):
        line = f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}"
        log.append(line)
        print(line)
        assert passed, line

    return check


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_RESULTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
