import numpy as np
import pytest

from torcover.lattice import AnnulusFamily, Site, ball, disc

CENTER16 = Site(8, 8)


@pytest.fixture
def rng():
    return np.random.default_rng(20261014)


@pytest.fixture(scope="session")
def slt_family():
    """The default soft-local-time geometry: ``B(c,1) subset B(c,7.5)`` on Z^2_16."""
    return AnnulusFamily.of([(ball(CENTER16, 1, 16), disc(CENTER16, 7.5, 16))])


@pytest.fixture(scope="session")
def small_annulus():
    """``B(c,1) subset B(c,3)`` on Z^2_16, the setting of the hand-built trajectory."""
    return AnnulusFamily.of([(ball(CENTER16, 1, 16), ball(CENTER16, 3, 16))])


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running statistical test")
