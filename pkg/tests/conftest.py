import os
from pathlib import Path

import pytest

from lipbench.numerics import RandomSource


def _data_root():
    return Path(os.environ.get("LIPBENCH_DATA", "data"))


def mnist_available():
    folder = _data_root() / "mnist"
    return (folder / "train-images-idx3-ubyte").exists() or (folder / "train-images-idx3-ubyte.gz").exists()


def cifar_available():
    base = _data_root()
    return any((f / "test_batch.bin").exists()
               for f in (base / "cifar10", base / "cifar10" / "cifar-10-batches-bin", base / "cifar-10-batches-bin"))


@pytest.fixture
def rng():
    return RandomSource(12345)
