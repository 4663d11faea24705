from __future__ import annotations

import pytest

from secmarket.cases import load_bundled
from secmarket.experiments import build_pools_and_pair
from secmarket.markets import make_scenario_set, scenario_subset
from secmarket.sensitivity import SensitivityFactors


@pytest.fixture(scope="session")
def case118():
    return load_bundled("synthetic118")


@pytest.fixture(scope="session")
def factors118(case118):
    return SensitivityFactors(case118)


@pytest.fixture(scope="session")
def study6():
    return load_bundled("study6")


@pytest.fixture(scope="session")
def study6_scenarios(study6):
    return make_scenario_set(study6, base_probability=0.946)


@pytest.fixture(scope="session")
def subset118(case118, factors118):
    return scenario_subset(case118, factors118)


@pytest.fixture(scope="session")
def study6_pools(study6, study6_scenarios):
    """Pools of 10 per objective at 1% gap on the bundled six-bus case, with their nominal comparison."""
    return build_pools_and_pair(study6, study6_scenarios, pool_size=10, gap=0.01, seed=0)


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import lines

    verdicts = lines()
    if verdicts:
        terminalreporter.section("acceptance criteria")
        for line in verdicts:
            terminalreporter.write_line(line)
