import math

import numpy as np
import pytest

from almost_anosov.maps import AlmostAnosovMap, MapSpec

LAMBDA_U = (3 + math.sqrt(5)) / 2
LOG_LAMBDA = math.log(LAMBDA_U)


@pytest.fixture(scope="session")
def fmap():
    return AlmostAnosovMap()


@pytest.fixture(scope="session")
def cat():
    return AlmostAnosovMap.linear_map()


@pytest.fixture(scope="session")
def small_coeff_map():
    """a=4, b=3, c=1, d=1 in the standard chart (small closed-form coefficients)."""
    return AlmostAnosovMap(MapSpec(a=4, b=3, c=1, d=1, r0=0.02, r1=0.05, chart="standard"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    from tests.test_acceptance import AC_LINES

    if AC_LINES:
        terminalreporter.section("acceptance criteria")
        for line in AC_LINES:
            terminalreporter.write_line(line)
