import numpy as np
import pytest
from hypothesis import settings

from qcdlab.model import ChangeTimeLaw, FiniteMarkov, IidDiscrete, IidGaussian, llr

settings.register_profile("qcd", max_examples=40, deadline=None)
settings.load_profile("qcd")

RHO = 0.1


@pytest.fixture
def gauss():
    return IidGaussian(0.0, 1.0, 1.0, 1.0)


@pytest.fixture
def two_symbol():
    return IidDiscrete([0.8, 0.2], [0.3, 0.7])


@pytest.fixture
def pm_one():
    # +/-1 increments on the two-symbol model
    from qcdlab.model import TableStatistic

    return TableStatistic(np.array([-1.0, 1.0]))


@pytest.fixture
def markov():
    return FiniteMarkov([[0.9, 0.1], [0.2, 0.8]], [[0.5, 0.5], [0.4, 0.6]])


@pytest.fixture
def geom():
    return ChangeTimeLaw.geometric(RHO)


@pytest.fixture
def three_state():
    # X0 = {0, 1}, X1 = {2}; restricted eigenvalue 0.6
    return np.array([[0.5, 0.2, 0.3], [0.1, 0.4, 0.5], [0.0, 0.0, 1.0]])
