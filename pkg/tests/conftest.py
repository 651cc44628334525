import time

import pytest

from srmptcp.radio import MediumConfig, RadioMedium
from srmptcp.runner import simulate
from srmptcp.scenario import builtin_scenario
from srmptcp.sim import Simulator


@pytest.fixture(scope="session")
def baseline_run():
    t0 = time.perf_counter()
    result = simulate(builtin_scenario("baseline"), record_decisions=True, keep_delivery_log=True)
    result.wall_seconds = time.perf_counter() - t0
    return result


@pytest.fixture(scope="session")
def delay200_run():
    return simulate(builtin_scenario("delay200"), record_decisions=True, keep_delivery_log=True)


@pytest.fixture
def sim():
    return Simulator(seed=7)


@pytest.fixture
def medium(sim):
    return RadioMedium(sim, MediumConfig())
