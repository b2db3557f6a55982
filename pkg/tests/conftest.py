import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from mwtl.grid import TorusGrid, band_limited_field

settings.register_profile(
    "mwtl", max_examples=25, deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture])
settings.load_profile("mwtl")


@pytest.fixture(scope="session")
def grid256():
    return TorusGrid(1, 8)


@pytest.fixture(scope="session")
def grid8():
    return TorusGrid(1, 3)


def random_spd(rng, m, cond=10.0, complex_=True):
    """Random Hermitian positive definite matrix with eigenvalues in [1, cond]."""
    Z = rng.standard_normal((m, m)) + (1j * rng.standard_normal((m, m)) if complex_ else 0)
    Q, _ = np.linalg.qr(Z)
    lam = np.exp(rng.uniform(0, np.log(cond), m))
    return (Q * lam) @ np.conj(Q.T)


def corpus(grid, m, size, band=(4, 32), seed0=0):
    return [band_limited_field(grid, m, band=band, seed=seed0 + i) for i in range(size)]
