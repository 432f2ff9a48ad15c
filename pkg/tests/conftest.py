import numpy as np
import pytest
from hypothesis import settings

from unimesh.curves import Polyline, fit_spline
from unimesh.geometry import structured_acute_mesh

settings.register_profile("unimesh", deadline=None, max_examples=40, derandomize=True)
settings.load_profile("unimesh")


@pytest.fixture(scope="session")
def unit_mesh():
    return structured_acute_mesh((0.0, 0.0, 1.0, 1.0), 8)


@pytest.fixture(scope="session")
def fine_mesh():
    return structured_acute_mesh((0.0, 0.0, 1.0, 1.0), 16)


@pytest.fixture(scope="session")
def arc_crack():
    # gently curved open crack well inside the unit square
    t = np.linspace(0.0, 1.0, 7)
    return fit_spline(np.c_[0.25 + 0.5 * t, 0.45 + 0.15 * np.sin(np.pi * t)])


@pytest.fixture(scope="session")
def straight_crack():
    return Polyline([[0.3, 0.52], [0.7, 0.52]])


def circle_points(R, n, center=(0.0, 0.0), start=0.0):
    th = start + 2 * np.pi * np.arange(n) / n
    return np.asarray(center) + R * np.c_[np.cos(th), np.sin(th)]


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
