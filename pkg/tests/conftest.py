"""Pytest configuration and fixtures."""

import sys
from pathlib import Path

import numpy as np
import pytest

# Add src directory to Python path for tests
src_path = Path(__file__).parent.parent / "src"
sys.path.insert(0, str(src_path))

from pmn.data import SequenceRecord  # noqa: E402
from pmn.model import PMNConfig  # noqa: E402


@pytest.fixture
def rng():
    """Seeded random generator."""
    return np.random.default_rng(1234)


@pytest.fixture
def make_config():
    """Factory for tiny model configs (d=4, 3 labels, length 12, 2 hops)."""

    def factory(**overrides):
        settings = dict(
            num_labels=3,
            embedding_dim=4,
            seq_length=12,
            hops=2,
            conv_channels=(4, 4, 4),
            conv_widths=(5, 3, 3),
            dropout=0.0,
            precision="f64",
        )
        settings.update(overrides)
        return PMNConfig(**settings)

    return factory


def random_one_hot(rng, length):
    x = np.zeros((4, length))
    x[rng.integers(4, size=length), np.arange(length)] = 1.0
    return x


@pytest.fixture
def one_hot(rng):
    """Factory for random one-hot 4 x T inputs."""
    return lambda length: random_one_hot(rng, length)


def make_records(rng, count, num_labels, length, chrom="chr2"):
    records = []
    for i in range(count):
        sequence = "".join("ACGT"[j] for j in rng.integers(4, size=length))
        positives = sorted(set(int(j) for j in rng.integers(num_labels, size=2)))
        records.append(SequenceRecord(chrom, i * length, sequence, tuple(positives), num_labels))
    return records


@pytest.fixture
def records(rng):
    """Factory for random labeled records."""
    return lambda count, num_labels=3, length=12, chrom="chr2": make_records(rng, count, num_labels, length, chrom)
