import numpy as np
import pytest

from agilecatch import kinematics
from agilecatch.config import Config
from agilecatch.stage_ocp import Limits, default_limits


@pytest.fixture(scope="session")
def model():
    return kinematics.default_model()


@pytest.fixture(scope="session")
def limits():
    return default_limits()


@pytest.fixture(scope="session")
def cfg():
    return Config()


@pytest.fixture
def wide_limits():
    """Roomy boxes with unit acceleration bound, for solver instances."""
    return Limits(qddot_a=np.ones(7), q_lo=-100 * np.ones(7), q_hi=100 * np.ones(7),
                  qdot_lo=-50 * np.ones(7), qdot_hi=50 * np.ones(7))
