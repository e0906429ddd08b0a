import numpy as np
import pytest

from seriesindex.data import generate_random_walk, z_normalize


@pytest.fixture(scope="session")
def walks_2k():
    return z_normalize(generate_random_walk(2000, 64, seed=11))


@pytest.fixture(scope="session")
def walks_10k():
    return z_normalize(generate_random_walk(10000, 256, seed=7))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(RESULTS):
        terminalreporter.write_line(line)
