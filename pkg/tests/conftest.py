import pytest

from ecomac_backoff import ScenarioConfig, build


@pytest.fixture(scope="session")
def two_sender_cfg():
    return ScenarioConfig()


@pytest.fixture(scope="session")
def two_sender_model(two_sender_cfg):
    return build(two_sender_cfg)


@pytest.fixture(scope="session")
def lone_cfg():
    return ScenarioConfig(n_senders=1, nmax_msg=1)


@pytest.fixture(scope="session")
def lone_model(lone_cfg):
    return build(lone_cfg)
