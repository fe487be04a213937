"""
Shared fixtures

Run with: pytest tests/
"""

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent.parent))

from src.synthetic import write_synthetic_dataset  # noqa: E402


@pytest.fixture
def rng():
    """Seeded generator so every test is reproducible"""
    return np.random.default_rng(12345)


@pytest.fixture
def fixture_manifest(tmp_path):
    """Bundled-size synthetic dataset: 3 classes x 4 test images"""
    return write_synthetic_dataset(tmp_path / "fixture", classes=3, per_class=4, seed=7)


@pytest.fixture
def train_manifest(tmp_path):
    """3 classes, 2 test and 2 train images each"""
    return write_synthetic_dataset(tmp_path / "train_fixture", classes=3, per_class=2,
                                   train_per_class=2, seed=11)
