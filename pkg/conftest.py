"""
Shared pytest fixtures for the mode connectivity lab
Long desk-scale runs are marked slow and only run with --runslow
"""
import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from data_forge.dataset import LabeledDataset  # noqa: E402
from data_forge.synthetic import gen_synthetic, split_train_test  # noqa: E402
from nn_core.architectures import mlp_spec, small_cnn_spec  # noqa: E402
from nn_core.engine import init_model  # noqa: E402


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run desk-scale experiments")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: desk-scale experiment, needs --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def tiny_data() -> LabeledDataset:
    """4 classes of 8x8 glyphs, 30 per class."""
    return gen_synthetic(num_classes=4, samples_per_class=30, image_size=8, noise_level=0.05, seed=3)


@pytest.fixture
def tiny_split(tiny_data):
    return split_train_test(tiny_data, test_fraction=0.3, seed=3)


@pytest.fixture
def mlp(tiny_data):
    spec = mlp_spec(tiny_data.image_shape, hidden=[12], num_classes=tiny_data.num_classes)
    return init_model(spec, seed=1)


@pytest.fixture
def cnn(tiny_data):
    spec = small_cnn_spec(tiny_data.image_shape, channels=(3, 4), hidden=(8,), num_classes=tiny_data.num_classes)
    return init_model(spec, seed=2)


def quadratic_grad(matrix: np.ndarray):
    """Gradient of 0.5 x^T A x."""
    return lambda x: matrix @ x


def random_psd(dim: int, top: float, seed: int) -> np.ndarray:
    """Symmetric PSD matrix with largest eigenvalue `top`, the rest in [0.5, 5]."""
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    spectrum = np.concatenate([[top], rng.uniform(0.5, 5.0, size=dim - 1)])
    return (q * spectrum) @ q.T
