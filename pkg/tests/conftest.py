import sys
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

from pxlap.branches import estimate_lambda_star  # noqa: E402
from pxlap.mesh import DomainSpec, build_grid  # noqa: E402
from pxlap.solvers import build_supersolution_small_lambda  # noqa: E402

settings.register_profile("repo", deadline=None, max_examples=30,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")

CRITERIA = []


@pytest.fixture(scope="session")
def grid():
    return build_grid(DomainSpec(), 201)


@pytest.fixture(scope="session")
def coarse():
    return build_grid(DomainSpec(), 21)


@pytest.fixture(scope="session")
def grid2d():
    return build_grid(DomainSpec(dimension=2), 21)


@pytest.fixture(scope="session")
def supersolution(grid):
    return build_supersolution_small_lambda(grid)


@pytest.fixture(scope="session")
def lambda_star(grid):
    return estimate_lambda_star(grid)


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(CRITERIA, key=lambda s: int(s.split()[2].rstrip(":"))):
        terminalreporter.write_line(line)


@pytest.fixture
def rng():
    import numpy as np

    return np.random.default_rng(42)
