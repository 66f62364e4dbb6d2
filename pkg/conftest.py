"""
Shared fixtures: seeded generators and small random instances
"""

import numpy as np
import pytest

from ot_core import DiscreteMeasure
from structures import LabeledDataset


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False,
                     help="run the full-size property checks")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: full-size property checks (run with --runslow)")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


def random_measure(rng, n, d=2, uniform=False):
    points = rng.normal(size=(n, d))
    if uniform:
        return DiscreteMeasure.uniform(points)
    weights = rng.random(n) + 0.05
    return DiscreteMeasure(points, weights / weights.sum())


def reordered_twin(rng, mu):
    """The same measure written differently: atoms shuffled, the first one split in two."""
    order = rng.permutation(mu.size)
    weights = mu.weights[order].copy()
    weights[0] /= 2
    support = np.vstack([mu.support[order], mu.support[order[:1]]])
    return DiscreteMeasure(support, np.append(weights, weights[0]))


def blobs(rng, centers, per_class, spread=1.0):
    """Labeled Gaussian blobs, per_class points around each center, labels 0..k-1."""
    centers = np.asarray(centers, dtype=float)
    points = np.vstack([c + spread * rng.normal(size=(per_class, centers.shape[1])) for c in centers])
    labels = np.repeat(np.arange(centers.shape[0]), per_class)
    return LabeledDataset(points, labels)


@pytest.fixture
def two_blobs(rng):
    return blobs(rng, [[0.0, 0.0], [20.0, 0.0]], per_class=15)
