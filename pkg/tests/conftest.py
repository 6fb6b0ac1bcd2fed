import numpy as np
import pytest


@pytest.fixture
def hamming2():
    return np.array([[0.0, 1.0], [1.0, 0.0]])


@pytest.fixture
def rng():
    return np.random.default_rng(20240801)
