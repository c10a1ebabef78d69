"""Trainer test fixtures: toy datasets and a shared random backbone."""

import numpy as np
import pytest

from cftrain.data import make_composites, load_dataset
from cftrain.model import backbone_prefix


@pytest.fixture(scope="session")
def toy_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("composites")
    make_composites(root, 10, image_side=224, object_side=64, seed=0)
    return load_dataset(root)


@pytest.fixture(scope="session")
def random_backbone():
    # built once; frozen, so sharing across tests is safe
    return backbone_prefix("random:0")


@pytest.fixture
def rng():
    return np.random.default_rng(99)
