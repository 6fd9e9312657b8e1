import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from ucprop.geometry import Grid

settings.register_profile("ucprop", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("ucprop")


@pytest.fixture(scope="session")
def grid2():
    return Grid.cube(2, 65, -1.0, 1.0)


@pytest.fixture(scope="session")
def grid3():
    return Grid.cube(3, 33, -1.0, 1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
