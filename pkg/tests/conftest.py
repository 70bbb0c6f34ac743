import numpy as np
import pytest

from changechip.config import build_config
from changechip.imaging import RasterImage, save_image
from changechip.synthetic import synthetic_board


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def board():
    """256 x 256 textured PCB-like image."""
    return synthetic_board(256, 256, seed=7)


@pytest.fixture(scope="session")
def small_board():
    return synthetic_board(96, 96, seed=3)


@pytest.fixture
def random_image(rng):
    def make(width=32, height=24):
        return RasterImage(rng.integers(0, 256, (height, width, 3)) / 255.0)
    return make


@pytest.fixture
def fast_config():
    """Defaults with fewer classes so small images cluster quickly."""
    return build_config(n=6, kmeans_max_iters=100)


@pytest.fixture
def write_png(tmp_path):
    def write(img, name):
        return save_image(img, tmp_path / name)
    return write
