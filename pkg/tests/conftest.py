import numpy as np
import pytest

from motionkit.geom import Skeleton


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def skeleton():
    return Skeleton.default()


@pytest.fixture(scope="session")
def small_skeleton():
    """Five-joint branching tree used where the full body is overkill."""
    parents = (-1, 0, 1, 0, 3)
    offsets = np.array([[0, 0, 0], [0.1, 0.2, 0], [0, 0.3, 0.05], [-0.1, -0.4, 0], [0, -0.4, 0.1]])
    return Skeleton(parents, offsets)
