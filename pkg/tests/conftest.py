import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def feature_pair(rng):
    """Small random reference/query feature maps"""
    return rng.normal(size=(4, 5, 3)), rng.normal(size=(4, 5, 3))


def integer_map(rng, shape, low=-9, high=10):
    """Integer-valued map; products and sums stay exact in float64"""
    return rng.integers(low, high, shape).astype(np.float64)
