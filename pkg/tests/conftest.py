import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, suppress_health_check=[HealthCheck.too_slow], max_examples=60
)
settings.load_profile("default")


def random_psd(rng, n, rank=None, jitter=0.0):
    rank = n if rank is None else rank
    m = rng.standard_normal((n, rank))
    return m @ m.T / max(rank, 1) + jitter * np.eye(n)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
