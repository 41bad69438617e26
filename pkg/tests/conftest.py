import numpy as np
import pytest

from memslab.grid import GridSpec


@pytest.fixture(scope="session")
def grid1d():
    return GridSpec(dim_D=1, nx=32, n_eta=13)


@pytest.fixture(scope="session")
def grid2d():
    return GridSpec(dim_D=2, nx=16, ny=16, n_eta=9)


@pytest.fixture()
def rng():
    return np.random.default_rng(20240817)
