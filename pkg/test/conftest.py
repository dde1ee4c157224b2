import csv

import numpy as np
import pytest

from sbfiml.data import Dataset


def make_blobs(centers, per_class, spread, seed):
    rng = np.random.default_rng(seed)
    centers = np.asarray(centers, dtype=float)
    X = np.vstack([c + spread * rng.standard_normal((per_class, centers.shape[1])) for c in centers])
    y = np.repeat(np.arange(1, len(centers) + 1), per_class)
    return X, y


def write_dataset_csv(path, X, labels, names=None):
    names = names or [f"f{i + 1}" for i in range(X.shape[1])]
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(names + ["label"])
        for row, label in zip(X, labels):
            writer.writerow([repr(float(v)) for v in row] + [label])
    return path


@pytest.fixture
def rng():
    return np.random.default_rng(20240501)


@pytest.fixture
def separable_2d():
    """Two tight 2-D clusters 10 units apart, 10 points each."""
    X, y = make_blobs([[0.0, 0.0], [10.0, 10.0]], per_class=10, spread=0.3, seed=3)
    return Dataset(X, y, label_names=("a", "b"))


@pytest.fixture
def three_class():
    X, y = make_blobs([[0.0, 0.0, 0.0], [3.0, 0.0, 1.0], [0.0, 3.0, -1.0]], per_class=10, spread=0.6, seed=11)
    return Dataset(X, y, label_names=("x", "y", "z"))


@pytest.fixture
def small_grid_config():
    """A RunConfig with one-option grids and short training, for fast pipeline tests."""
    from sbfiml.config import CVSettings, RunConfig, SimilaritySettings
    from sbfiml.learner import LearnerConfig

    return RunConfig(
        similarity=SimilaritySettings(families=("gaussian",), shared_multipliers=(1.0,),
                                      entropy_targets=(), margins=(1e-2,)),
        learner=LearnerConfig(max_iters=15),
        cv=CVSettings(repeats=1, n_folds=3),
    )


@pytest.fixture
def toy_csv(tmp_path, separable_2d):
    labels = [separable_2d.label_names[y - 1] for y in separable_2d.labels]
    return write_dataset_csv(tmp_path / "toy2d.csv", separable_2d.instances, labels)


@pytest.fixture
def write_csv():
    return write_dataset_csv


@pytest.fixture
def blobs():
    return make_blobs
