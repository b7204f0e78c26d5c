import numpy as np
import pytest

from treeids.core_data import Dataset, FeatureSchema


def make_dataset(rows, labels, names=None, label_names=None):
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim == 1:
        rows = rows.reshape(-1, 1)
    labels = np.asarray(labels, dtype=np.int64)
    if names is None:
        names = tuple(f"f{i}" for i in range(rows.shape[1]))
    if label_names is None:
        label_names = {int(c): f"C{c}" for c in np.unique(labels)}
    return Dataset(FeatureSchema(tuple(names)), rows, labels, label_names)


def random_dataset(rng, n, p, k):
    """Random rows with every class guaranteed present."""
    rows = rng.random((n, p))
    labels = rng.integers(0, k, n)
    labels[:k] = np.arange(k)
    names = {i: f"C{i}" for i in range(k)}
    return Dataset(FeatureSchema(tuple(f"f{i}" for i in range(p))), rows, labels, names)


@pytest.fixture
def separable_dataset():
    """Two clean clusters: feature 0 below/above 0.5 decides the class."""
    rng = np.random.default_rng(42)
    n = 120
    labels = np.repeat([0, 1], n // 2)
    rows = np.column_stack([
        np.where(labels == 0, rng.uniform(0.0, 0.4, n), rng.uniform(0.6, 1.0, n)),
        rng.random(n),
    ])
    return make_dataset(rows, labels, label_names={0: "Normal", 1: "Attack"})
