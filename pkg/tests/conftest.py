import math
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from freqwes.smc import ParticleEnsemble  # noqa: E402


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running statistical or benchmark test")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def ensemble(locations, weights=None):
    locations = np.asarray(locations, dtype=float)
    if weights is None:
        weights = np.full(len(locations), 1.0 / len(locations))
    return ParticleEnsemble(locations, np.asarray(weights, dtype=float))


HALF_PI = math.pi / 2
