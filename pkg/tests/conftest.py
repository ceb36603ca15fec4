import io

import numpy as np
import pytest
from rich.console import Console

from cvforge.datasets import gaussian_clusters, overlapping_gaussians
from cvforge.features import FeatureSpec, Raw, SinCos


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def two_blobs():
    """Two well separated 2-D clusters."""
    return gaussian_clusters(np.array([[-2.0, 0.0], [2.0, 0.0]]), 200, 0.5, seed=1)


@pytest.fixture
def three_blobs():
    return gaussian_clusters(np.array([[0.0, 2.0], [-1.8, -1.0], [1.8, -1.0]]), 150, 0.4, seed=2)


@pytest.fixture
def noisy_pair():
    """Two unit Gaussians two standard deviations apart in five dimensions."""
    return overlapping_gaussians(1000, 5, 2.0, seed=3)


@pytest.fixture
def torsion_spec():
    return FeatureSpec((SinCos(0), SinCos(1)), 2)


@pytest.fixture
def raw_spec():
    return FeatureSpec((Raw(0),), 1)


@pytest.fixture
def quiet_console():
    return Console(file=io.StringIO(), width=120)
