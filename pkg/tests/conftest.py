import logging

import pytest

from gfmsim.benchmark import BenchmarkSystem, tune_system

logging.getLogger("gfmsim").setLevel(logging.ERROR)


@pytest.fixture(scope="session")
def bench():
    return BenchmarkSystem()


@pytest.fixture(scope="session")
def tuned(bench):
    """``(gains, report, loops)`` for the benchmark."""
    return tune_system(bench)


@pytest.fixture(scope="session")
def gains(tuned):
    return tuned[0]
