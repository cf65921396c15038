import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from proxsweep.library import make_moving_ball, make_scalar_play, make_star_set

settings.register_profile(
    "default",
    deadline=None,
    max_examples=40,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def play():
    return make_scalar_play(1.0)


@pytest.fixture(scope="session")
def ball():
    return make_moving_ball(2, 1.0)


@pytest.fixture(scope="session")
def star():
    return make_star_set(1.0, 0.2, 3)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def star_boundary(theta, R0=1.0, a=0.2, k=3, phi=0.0, center=(0.0, 0.0)):
    """Dense polar parameterisation of the star boundary (test oracle)."""
    theta = np.asarray(theta, float)
    R = R0 * (1.0 + a * np.cos(k * (theta - phi)))
    return np.column_stack([center[0] + R * np.cos(theta), center[1] + R * np.sin(theta)])


ACCEPTANCE_LINES: list[str] = []


def acceptance_line(number: int, title: str, passed: bool, detail: str) -> None:
    """Record one pass/fail line for the terminal summary."""
    ACCEPTANCE_LINES.append(f"[{'PASS' if passed else 'FAIL'}] {number:>2}. {title}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split(".")[0].split()[-1])):
        terminalreporter.write_line(line)
