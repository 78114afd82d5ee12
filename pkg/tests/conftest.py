import pytest

from codim1lab.geometry import build_geometry

SPHERE = {"kind": "sphere", "radius": 1.0}
SPHEROID = {"kind": "spheroid", "equatorial_radius": 1.0, "polar_radius": 1.5}
TORUS = {"kind": "torus", "major_radius": 2.0, "minor_radius": 0.5}


@pytest.fixture(scope="session")
def sphere():
    return build_geometry(SPHERE)


@pytest.fixture(scope="session")
def spheroid():
    return build_geometry(SPHEROID)


@pytest.fixture(scope="session")
def torus():
    return build_geometry(TORUS)


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])
