import copy
from pathlib import Path

import pytest

from resusim.scenario import default_scenario, default_scenario_dict

ROOT = Path(__file__).resolve().parent.parent
SCENARIO_FILE = ROOT / "scenarios" / "default.scenario"


@pytest.fixture(scope="session")
def scenario():
    return default_scenario()


@pytest.fixture
def scenario_dict():
    return copy.deepcopy(default_scenario_dict())
