import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)


def random_rgb(rng, height, width):
    return rng.integers(0, 256, size=(height, width, 3), dtype=np.uint8)
