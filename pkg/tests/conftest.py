import numpy as np
import pytest

from cwimpute.mixture import FmmParams
from cwimpute.stats import rng_stream


def random_spd(rng, q, scale=1.0):
    """Random well-conditioned SPD matrix."""
    a = rng.normal(size=(q, q))
    return scale * (a @ a.T + 0.5 * q * np.eye(q))


def random_fmm(rng, g, q, spread=3.0):
    """Random mixture with Dirichlet weights and spread-out means."""
    alpha = rng.dirichlet(np.full(g, 2.0))
    mu = rng.normal(scale=spread, size=(g, q))
    sigma = np.stack([random_spd(rng, q) for _ in range(g)])
    return FmmParams(alpha=alpha, mu=mu, sigma=sigma)


@pytest.fixture
def rng():
    return rng_stream(20240915)
