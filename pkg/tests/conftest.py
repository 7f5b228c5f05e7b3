import numpy as np
import pytest

from sketchattack.core import RateDistribution, ThresholdPair


@pytest.fixture
def default_rates():
    return RateDistribution(0.1, 0.2, 0.55, 0.7)


@pytest.fixture
def desk_thresholds():
    return ThresholdPair(614, 1024, 2048)


@pytest.fixture
def gen():
    return np.random.default_rng(12345)
