import numpy as np
import pytest

from sllg.field_core import Grid
from sllg.lab import bandlimited_unit_field, random_trig_field
from sllg.model import ModelParams, State


_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance_lines():
    return _ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)


@pytest.fixture
def grid32():
    return Grid(32, 32)


@pytest.fixture
def grid64():
    return Grid(64, 64)


@pytest.fixture
def params():
    return ModelParams(alpha=1.0, beta=0.5)


def smooth_state(grid, seed=0, s_amp=0.5, max_wave=1):
    rng = np.random.default_rng(seed)
    m = bandlimited_unit_field(grid, rng, max_wave)
    s = s_amp * random_trig_field(grid, rng, 2)
    return State(s, m, 0.0, grid)
