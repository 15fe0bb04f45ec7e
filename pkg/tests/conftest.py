import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def piecewise_image(h, w, seed=0, n_rects=3, base=0.1):
    """Blocky test image in [0.1, 0.9]: background plus a few rectangles."""
    gen = np.random.default_rng(seed)
    img = np.full((h, w), base)
    for _ in range(n_rects):
        r0, r1 = sorted(gen.integers(0, h, size=2))
        c0, c1 = sorted(gen.integers(0, w, size=2))
        img[r0 : r1 + 1, c0 : c1 + 1] = gen.uniform(0.2, 0.9)
    return img


@pytest.fixture
def blocky16():
    return piecewise_image(16, 16, seed=3)


@pytest.fixture
def box3():
    return np.ones((3, 3)) / 9.0
