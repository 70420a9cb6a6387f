from __future__ import annotations

import numpy as np
import pytest

from uwacnet.approxfit import published_coeffs
from uwacnet.channel import EnvironmentParams
from uwacnet.config import get_env_flag
from uwacnet.netopt import Deployment
from uwacnet.waterfill import Tolerances

SLOW = get_env_flag("UWACNET_SLOW")


def pytest_collection_modifyitems(config, items):
    if SLOW:
        return
    skip_slow = pytest.mark.skip(reason="set UWACNET_SLOW=1 to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def env():
    return EnvironmentParams()


@pytest.fixture
def tolerances():
    return Tolerances()


@pytest.fixture
def case1_power():
    return published_coeffs("case1", "power")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def line3():
    """Three nodes on a line, 0.5 km apart"""
    return Deployment.from_positions([(0.0, 0.0), (0.5, 0.0), (1.0, 0.0)])


@pytest.fixture
def four_nodes():
    """
    Four nodes where node 0 reaches {1}, then {1, 3}, then {1, 2, 3}
    in increasing range.
    """
    return Deployment.from_positions([(0.0, 0.0), (0.3, 0.0), (0.9, 0.0), (0.0, 0.5)])
