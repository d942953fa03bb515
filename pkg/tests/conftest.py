import math

import numpy as np
import pytest

from yamabe_lab.ground_state import solve_ground_state
from yamabe_lab.manifold import build_circle, build_flat_torus, build_sphere
from yamabe_lab.nehari import ProblemParams


@pytest.fixture(scope="session")
def circle():
    return build_circle(2 * math.pi, 2048)


@pytest.fixture(scope="session")
def small_circle():
    return build_circle(2 * math.pi, 256)


@pytest.fixture(scope="session")
def torus():
    return build_flat_torus(2 * math.pi, 2 * math.pi, 32, 32)


@pytest.fixture(scope="session")
def sphere():
    return build_sphere(3)


@pytest.fixture(scope="session")
def profile_1_4():
    return solve_ground_state(1, 4.0)


@pytest.fixture(scope="session")
def circle_params(circle):
    return ProblemParams(circle, 3, 0.05)


@pytest.fixture(scope="session")
def small_params(small_circle):
    return ProblemParams(small_circle, 3, 0.3)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def record():
    """Print and keep one PASS/FAIL line per acceptance criterion."""

    def _record(label, passed, detail=""):
        status = "SKIP" if passed is None else ("PASS" if passed else "FAIL")
        line = f"{status}  {label}  {detail}".rstrip()
        ACCEPTANCE_LINES.append(line)
        print(line, flush=True)
        return passed

    return _record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
