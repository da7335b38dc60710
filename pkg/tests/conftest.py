import numpy as np
import pytest

from driftcrb import _kernels
from driftcrb.model import INFINITY

RHO_GRID = [0.0, 0.3, 0.6, 0.9, 0.99, 1.0]
GAMMA_GRID = [0.0, 0.01, 1.0, 10.0]
TAU_GRID = [1, 2, 5, INFINITY]


def valid_points(rhos=RHO_GRID, gammas=GAMMA_GRID, taus=TAU_GRID):
    """(rho, gamma, tau) combinations with a finite bound."""
    return [(r, g, t) for r in rhos for g in gammas for t in taus if not (r == 1.0 and t is INFINITY)]


@pytest.fixture(params=["numpy", "numba"] if _kernels.HAVE_NUMBA else ["numpy"])
def backend(request):
    with _kernels.use_backend(request.param):
        yield request.param


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
