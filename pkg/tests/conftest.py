import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def toy_train():
    from segsynth.toydata import toy_dataset
    return toy_dataset(24, seed=5, size=64)


@pytest.fixture(scope="session")
def toy_bank(toy_train):
    from segsynth.segment_bank import build_bank
    return build_bank([(im, lay, sid) for im, lay, sid, _ in toy_train])
