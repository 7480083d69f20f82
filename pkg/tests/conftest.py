import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from shearlab.dynamics import FlowState, leray_project_moving
from shearlab.grid import SpectralGrid, symmetrize

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_coeffs(grid, rng, scale=1.0):
    c = rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape)
    return symmetrize(c * scale)


def random_state(grid, rng, t=0.0, scale=1.0):
    """Reality-symmetric, divergence-free state with O(scale) coefficients."""
    U = np.stack([random_coeffs(grid, rng, scale) for _ in range(3)])
    return leray_project_moving(FlowState.from_packed(t, grid, U))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_grid():
    return SpectralGrid(3, 3, 2 * math.pi)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
