import numpy as np
import pytest

from tdrom.testcases import build_advdiff_2d, build_advection_1d, build_burgers_1d


@pytest.fixture(scope="session")
def advection():
    return build_advection_1d(n=101)


@pytest.fixture(scope="session")
def advdiff():
    return build_advdiff_2d(n_side=9)


@pytest.fixture(scope="session")
def burgers():
    return build_burgers_1d(n=40)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
