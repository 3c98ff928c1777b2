import numpy as np
import pytest
from hypothesis import settings

from gmlab import schedule
from gmlab.analytic import GaussianMixture

settings.register_profile("gmlab", max_examples=40, deadline=None)
settings.load_profile("gmlab")


@pytest.fixture
def fm():
    return schedule.flow_matching()


@pytest.fixture
def vp():
    return schedule.variance_preserving(2.0)


@pytest.fixture
def ve():
    return schedule.variance_exploding()


def two_bumps_1d():
    return GaussianMixture(np.array([0.4, 0.6]), np.array([[-1.5], [1.0]]), np.array([0.3, 0.5]))


def two_bumps_2d():
    return GaussianMixture(np.array([0.5, 0.5]), np.array([[-1.0, 0.5], [1.0, -0.5]]),
                           np.array([0.4, 0.2]))
