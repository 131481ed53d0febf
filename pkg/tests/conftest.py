import numpy as np
import pytest

from dgss import simulation
from dgss.model import HyperParams


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running statistical reproduction")


@pytest.fixture(scope="session")
def small_problem():
    cfg = simulation.SimConfig(p=6, q=3, n_active_covs=2, n=120, seed=11)
    data, truth = simulation.simulate_replicate(cfg, 0)
    h = HyperParams.default(cfg.p, cfg.q, intercept=0)
    return data, truth, h


def se_of_mean(x):
    x = np.asarray(x, dtype=float)
    return x.std(ddof=1) / np.sqrt(x.size)
