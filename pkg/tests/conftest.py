import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))   # for the oracles module

from epigrid.grid import make_rect_grid


@pytest.fixture
def grid5():
    return make_rect_grid(5, 5, 1.0, 1.0, 1.0)


@pytest.fixture
def grid3():
    return make_rect_grid(3, 3, 1.0, 1.0, 1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(20260819)
