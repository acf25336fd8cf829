import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "fracext", deadline=None, max_examples=25, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("fracext")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
