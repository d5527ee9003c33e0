from pathlib import Path

import pytest
from hypothesis import settings

from icenet.scenario import build_network, bundled_ice_scenario, load_scenario

FIXTURES = Path(__file__).parent / "fixtures"

settings.register_profile("thorough", max_examples=1000, deadline=None)
settings.load_profile("thorough")


def fixture_path(name: str) -> Path:
    return FIXTURES / name


@pytest.fixture
def ice_doc():
    return bundled_ice_scenario()


@pytest.fixture
def ice_net(ice_doc):
    return build_network(ice_doc)


@pytest.fixture
def load_fixture():
    return lambda name: load_scenario(FIXTURES / name)
