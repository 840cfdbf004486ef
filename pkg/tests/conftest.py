import math

import numpy as np
import pytest

from isskit import pde


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def pi_grid():
    return pde.Grid1D(math.pi, 100)
