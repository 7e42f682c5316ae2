import numpy as np
import pytest

from mockingbird.dataset_io import SyntheticSpec, generate_synthetic, split_half
from mockingbird.detector import TrainConfig, train


@pytest.fixture(scope="session")
def small_data():
    """6 classes x 10 instances; quick enough for unit tests."""
    return generate_synthetic(SyntheticSpec(classes=6, instances_per_class=10, seed=3))


@pytest.fixture(scope="session")
def small_split(small_data):
    return split_half(small_data, seed=0)


@pytest.fixture(scope="session")
def small_detector(small_split):
    return train(small_split.detector_set, TrainConfig(epochs=60, hidden_dims=(32,), seed=0))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
