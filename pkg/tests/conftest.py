import numpy as np
import pytest

from tatsample.domain import SpeedField, make_layout


@pytest.fixture
def small_layout():
    """Unit square of 64 cells with a 24-cell pad (room for the sponge)."""
    return make_layout(half_side=1.0, cells=64, pad_cells=24)


@pytest.fixture
def const_speed(small_layout):
    return SpeedField.constant(small_layout.grid)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
