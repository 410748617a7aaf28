import os

import numpy as np
import pytest

from saug.datasets import dataset_path
from saug.graph import load_graph_dir, small_graph


def cora_available() -> bool:
    return os.path.exists(os.path.join(dataset_path("cora"), "edges.txt"))


needs_cora = pytest.mark.skipif(not cora_available(), reason="Cora files not found under data/cora")


@pytest.fixture(scope="session")
def cora():
    if not cora_available():
        pytest.skip("Cora files not found")
    return load_graph_dir(dataset_path("cora"), normalize=False)


@pytest.fixture
def triangle():
    return small_graph(3, [(0, 1), (1, 2), (0, 2)], labels=[0, 1, 0], num_classes=2)


def star(leaves: int = 9, features=None):
    return small_graph(leaves + 1, [(0, i) for i in range(1, leaves + 1)], features=features)


def random_graph(n: int, p: float, rng, d_x: int = 4, num_classes: int = 3):
    iu = np.triu_indices(n, 1)
    mask = rng.random(len(iu[0])) < p
    edges = np.stack([iu[0][mask], iu[1][mask]], axis=1)
    x = rng.random((n, d_x))
    y = rng.integers(num_classes, size=n)
    return small_graph(n, edges, features=x, labels=y, num_classes=num_classes)
