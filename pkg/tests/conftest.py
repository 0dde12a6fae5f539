import os

import numpy as np
import pytest
import torch
from hypothesis import HealthCheck, settings

torch.set_num_threads(2)

settings.register_profile(
    "parkvol",
    max_examples=25,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("parkvol")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_volume():
    from parkvol.io import Volume3D

    data = np.arange(4 * 3 * 2, dtype=np.float32).reshape(4, 3, 2)
    return Volume3D(data, (1.0, 1.5, 2.0))


@pytest.fixture
def tiny_mask():
    from parkvol.io import StructureMask

    data = np.zeros((4, 3, 2), dtype=np.uint8)
    data[1:3, 1, 0] = 1
    return StructureMask(data, (1.0, 1.5, 2.0), "pons")
