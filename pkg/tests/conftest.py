import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from palmscore.core import ModelParams, orthonormalize_basis

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_instance(rng, p=6, q=2, r=1, scale=0.3):
    """Small random (theta, V, x, u) with moderate intensities."""
    V = orthonormalize_basis(rng.normal(size=(p, q))).V
    A = rng.normal(size=(q, q))
    Lam = 0.3 * (A @ A.T) / q + 0.5 * np.eye(q)
    theta = ModelParams(scale * rng.normal(size=(q, r + 2)), Lam, 0.5 * rng.normal(size=r + 1))
    u = rng.poisson(1.0, size=r).astype(float)
    y = int(rng.integers(0, 2))
    W = rng.multivariate_normal(np.zeros(q), Lam)
    x = rng.poisson(np.exp(V @ (theta.B @ np.r_[1.0, u, y] + W))).astype(float)
    return theta, V, x, u, y


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
