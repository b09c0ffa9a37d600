import warnings

import numpy as np
import pytest

from eigenmap_lab import eigenmap as em
from eigenmap_lab import fixtures as fx
from eigenmap_lab.meshpde.mesh import make_mesh


@pytest.fixture(autouse=True)
def _quiet():
    # the Neumann solver warns about projected-out compatibility defects; tests check values directly
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        yield


@pytest.fixture(scope="session")
def disk10():
    return make_mesh("disk", 0.1)


@pytest.fixture(scope="session")
def disk05():
    return make_mesh("disk", 0.05)


@pytest.fixture(scope="session")
def half10():
    return make_mesh("half_disk", 0.1)


@pytest.fixture(scope="session")
def half05():
    return make_mesh("half_disk", 0.05)


@pytest.fixture(scope="session")
def circle_sol10(disk10):
    return em.solve_interior(disk10, [1.0, 1.0], fx.circle_eigenmap(1.0))


@pytest.fixture(scope="session")
def circle_sol05(disk05):
    return em.solve_interior(disk05, [1.0, 1.0], fx.circle_eigenmap(1.0))


@pytest.fixture(scope="session")
def small_sol10(disk10):
    """Small-energy eigenmap into the ellipsoid with Lambda = (1, 1, 4)."""
    E = [1.0, 1.0, 4.0]
    return em.solve_interior(disk10, E, fx.symmetric_loop(E, 0.02))


@pytest.fixture(scope="session")
def loop_sol10(disk10):
    E = [1.0, 1.0, 4.0]
    return em.solve_interior(disk10, E, fx.random_loop(E, 3, amplitude=0.3))


def rel(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES: dict = {}


def record_criterion(number: int, ok: bool, detail: str) -> str:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
