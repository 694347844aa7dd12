import numpy as np
import pytest


def random_mask(rng, h, w, density=None):
    density = rng.random() if density is None else density
    return np.where(rng.random((h, w)) < density, 1, -1).astype(np.int8)


def block_mask(h=5, w=5, top=1, left=1, bh=3, bw=3):
    m = -np.ones((h, w), dtype=np.int8)
    m[top:top + bh, left:left + bw] = 1
    return m


@pytest.fixture
def rng():
    return np.random.default_rng(20221)
