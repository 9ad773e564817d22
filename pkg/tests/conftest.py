import functools
import warnings

import numpy as np
import pytest

from evmma.modal import decompose, linearize
from evmma.scenarios import build_scenario_system, load_scenario


@functools.lru_cache(maxsize=None)
def scenario_system(name, pile_load=None):
    return build_scenario_system(load_scenario(name), pile_load=pile_load)


@functools.lru_cache(maxsize=None)
def scenario_modes(name):
    system = scenario_system(name)
    lm = linearize(system)
    return system, lm, decompose(lm)


@pytest.fixture(scope="session")
def kundur_base():
    return scenario_modes("kundur2area_base")


@pytest.fixture(scope="session")
def kundur_heavy():
    return scenario_modes("kundur2area_heavy")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_configure(config):
    warnings.filterwarnings("ignore", message=".*Prony data matrix rank.*")


ACCEPTANCE_LINES = []


def record_criterion(number, passed, detail):
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'} ({detail})"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
