import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_ellipsoid(rng, q, r, rank=None, center_scale=1.0):
    """``N`` with ``[I; Z]^T N [I; Z] = Q^2 - (Z - Zc)^T R^2 (Z - Zc)``."""
    G = rng.standard_normal((q, q))
    Q2 = G @ G.T + 0.1 * np.eye(q)
    rank = r if rank is None else rank
    H = rng.standard_normal((r, rank))
    R2 = H @ H.T + (0.1 * np.eye(r) if rank == r else 0.0)
    Zc = center_scale * rng.standard_normal((r, q))
    return np.block([[Q2 - Zc.T @ R2 @ Zc, Zc.T @ R2], [R2 @ Zc, -R2]])
