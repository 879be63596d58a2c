from __future__ import annotations

import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


@pytest.fixture
def u3_path(tmp_path):
    path = tmp_path / "u3.txt"
    path.write_text("1\n1\n1\n")
    return path


@pytest.fixture
def random_weights():
    """200 random positive weight vectors of length 2..200, fixed seed."""
    rng = np.random.default_rng(20240601)
    return [rng.uniform(0.01, 1.0, int(rng.integers(2, 201))) for _ in range(200)]
