import logging

import numpy as np
import pytest
import structlog

from robusthalf.core import Dataset, Halfspace, NormSpec
from robusthalf.datagen import PlantSpec, generate
from robusthalf.perturbations import INSIDE, Hyperplane


@pytest.fixture(autouse=True)
def restore_logging():
    root = logging.getLogger()
    handlers, level = list(root.handlers), root.level
    yield
    root.handlers = handlers
    root.setLevel(level)
    structlog.reset_defaults()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def ball_oracle(center, radius):
    """Exact separation oracle of a Euclidean ball."""
    center = np.asarray(center, dtype=np.float64)

    def oracle(v):
        g = v - center
        if float(np.linalg.norm(g)) <= radius:
            return INSIDE
        return Hyperplane(g)

    return oracle


def box_oracle(lo, hi):
    """Exact separation oracle of an axis-aligned box."""
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)

    def oracle(v):
        over = v - hi
        under = lo - v
        i = int(np.argmax(np.maximum(over, under)))
        if over[i] <= 0 and under[i] <= 0:
            return INSIDE
        g = np.zeros_like(v)
        g[i] = 1.0 if over[i] > 0 else -1.0
        return Hyperplane(g)

    return oracle


def sample_ball(rng, center, radius, n, p=2.0):
    from robusthalf.datagen import sample_lp_ball

    center = np.asarray(center, dtype=np.float64)
    return center + radius * sample_lp_ball(rng, n, center.shape[0], p)


@pytest.fixture
def planted():
    """A noiseless gamma = 0.2 plant in the unit l2 ball."""
    return generate(PlantSpec(d=3, m=60, gamma=0.2, p=2, seed=3))


@pytest.fixture
def l2():
    return NormSpec(2)


@pytest.fixture
def toy():
    X = np.array([[1.0, 0.0], [0.5, 0.5], [-1.0, 0.0], [-0.5, -0.5]])
    y = np.array([1, 1, -1, -1])
    return Dataset(X, y), Halfspace(np.array([1.0, 0.0]))
