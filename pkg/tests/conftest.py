import numpy as np
import pytest

from tracefem import build_mesh
from tracefem.geometry import extract_surface, interpolate_levelset, select_active_region
from tracefem.problem import builtin_experiment

BOX = ((-2.0, -2.0, -2.0), (2.0, 2.0, 2.0))


@pytest.fixture(scope="session")
def mesh4():
    return build_mesh(*BOX, 0.25)


@pytest.fixture(scope="session")
def mesh2():
    return build_mesh(*BOX, 0.5)


@pytest.fixture(scope="session")
def exp1():
    return builtin_experiment(1)


@pytest.fixture(scope="session")
def exp1_geometry(mesh4, exp1):
    """Level set, surface and band of experiment 1 at t=1/32 on h=1/4."""
    t = 1.0 / 32
    ls = interpolate_levelset(exp1, t, mesh4)
    surface = extract_surface(mesh4, ls)
    region = select_active_region(mesh4, ls, 2.5 * 0.2 / 32, surface)
    return ls, surface, region


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_configure(config):
    config.acceptance_lines = []


def pytest_terminal_summary(terminalreporter, config):
    if config.acceptance_lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(config.acceptance_lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
