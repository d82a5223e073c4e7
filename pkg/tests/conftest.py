import numpy as np
import pytest

from dpmlab.mixture import GaussianMixture
from dpmlab.schedule import NoiseSchedule


@pytest.fixture
def vp():
    return NoiseSchedule(kind="vp-linear", beta_min=0.1, beta_max=20.0)


@pytest.fixture
def ve():
    return NoiseSchedule(kind="ve-geometric", sigma_min=0.01, sigma_max=50.0)


@pytest.fixture
def std_gauss():
    """Single standard Gaussian in 2D."""
    return GaussianMixture(
        weights=np.array([1.0]),
        means=np.zeros((1, 2)),
        covs=np.eye(2)[None],
    )


@pytest.fixture
def two_comp():
    """Mildly separated 2D mixture with one correlated component."""
    return GaussianMixture(
        weights=np.array([0.6, 0.4]),
        means=np.array([[1.5, 0.5], [-1.2, -0.8]]),
        covs=np.array([
            [[0.40, 0.10], [0.10, 0.30]],
            [[0.25, -0.05], [-0.05, 0.50]],
        ]),
    )


@pytest.fixture
def three_comp():
    return GaussianMixture(
        weights=np.array([0.5, 0.3, 0.2]),
        means=np.array([[2.0, 0.0], [-1.0, 1.5], [-0.5, -2.0]]),
        covs=np.array([
            [[0.30, 0.00], [0.00, 0.30]],
            [[0.50, 0.15], [0.15, 0.25]],
            [[0.20, -0.08], [-0.08, 0.40]],
        ]),
    )
