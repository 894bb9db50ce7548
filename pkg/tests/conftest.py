import os, pytest
import numpy as np

from swingdual.contract import preset_swing
from swingdual.model import MarketModel


@pytest.fixture()
def small_model():
    return MarketModel(sigma=0.5, meanrev=0.9, mu=0.0, s0=1.0, horizon=6)


@pytest.fixture()
def flat_model():
    """sigma = 0: every path follows the same deterministic curve."""
    return MarketModel(sigma=0.0, meanrev=0.9, mu=0.0, s0=1.5, horizon=5)


@pytest.fixture()
def toy_prices():
    """T = 2, prices (2, 4, 3) and the cemetery price 0."""
    return np.array([2.0, 4.0, 3.0, 0.0])


@pytest.fixture()
def toy_spec():
    return preset_swing(strike=1.0, rights=2, horizon=2, volume="unit", delta=1)


@pytest.fixture()
def rng():
    return np.random.default_rng(20240917)


def pytest_collection_modifyitems(config, items):
    if os.environ.get("SWINGDUAL_RUN_SLOW") == "1":
        return
    skip = pytest.mark.skip(reason="set SWINGDUAL_RUN_SLOW=1 to run price table reproductions")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)
