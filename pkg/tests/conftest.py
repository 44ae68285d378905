import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def cube_points(rng, n, R=2.0, inset=0.0):
    return rng.uniform(-R + inset, R - inset, size=(n, 3))
