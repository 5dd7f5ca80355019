"""Shared fixtures and opt-in flags for the refpriv tests."""

import numpy as np
import pytest

from refpriv.datasets import LabeledDataset, synthesize
from refpriv.numeric_core import OutputActivation, init_mlp

from .const import TINY_CLASSES, TINY_DIM, TINY_PER_CLASS


def pytest_addoption(parser):
    """Register the desk-scale and full-scale opt-in flags."""
    parser.addoption(
        "--desk-scale",
        action="store_true",
        default=False,
        help="run minutes-long desk-scale end-to-end tests",
    )
    parser.addoption(
        "--full-scale",
        action="store_true",
        default=False,
        help="run the Purchase100 reproduction (needs REFPRIV_PURCHASE100)",
    )


def pytest_collection_modifyitems(config, items):
    """Skip marked tests unless their flag was given."""
    for marker, option in (("desk_scale", "--desk-scale"), ("full_scale", "--full-scale")):
        if config.getoption(option):
            continue
        skip = pytest.mark.skip(reason=f"needs {option}")
        for item in items:
            if marker in item.keywords:
                item.add_marker(skip)


@pytest.fixture
def rng():
    """A fixed-seed generator."""
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_dataset():
    """A small clustered binary dataset, 4 classes x 40 rows x 24 features."""
    return synthesize(
        TINY_CLASSES, TINY_PER_CLASS, TINY_DIM, cluster_tightness=0.5, flip_prob=0.05, seed=7
    )


@pytest.fixture
def toy_dataset():
    """Six hand-written rows over three classes."""
    return LabeledDataset(
        np.array(
            [
                [1.0, 0.0, 0.0, 1.0],
                [1.0, 1.0, 0.0, 0.0],
                [0.0, 1.0, 1.0, 0.0],
                [0.0, 0.0, 1.0, 1.0],
                [1.0, 0.0, 1.0, 0.0],
                [0.0, 1.0, 0.0, 1.0],
            ]
        ),
        np.array([0, 0, 1, 1, 2, 2]),
        3,
    )


@pytest.fixture
def small_model(rng):
    """A [4, 5, 3] softmax network."""
    return init_mlp((4, 5, 3), rng)


@pytest.fixture
def small_sigmoid_model(rng):
    """A [6, 4, 1] sigmoid network."""
    return init_mlp((6, 4, 1), rng, OutputActivation.SIGMOID)
