import numpy as np
import pytest

from surface13.code_model import build_surface13
from surface13.noisy_circuit import NoiseParams, attach_noise, build_memory_circuit


@pytest.fixture(scope="session")
def layout():
    return build_surface13()


@pytest.fixture(scope="session")
def table_noise():
    return NoiseParams()


def noisy(layout, rounds, params=None, classification_flips=True):
    params = params or NoiseParams()
    return attach_noise(build_memory_circuit(layout, rounds, params), params, classification_flips)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
