import pytest

from robust_hjm.hjm import InitialCurve
from robust_hjm.scenarios import TimeGrid, VolatilityBand


@pytest.fixture
def band():
    return VolatilityBand(0.1, 0.2)


@pytest.fixture
def grid():
    return TimeGrid(1.0, 100)


@pytest.fixture
def flat():
    return InitialCurve.flat(0.02)
