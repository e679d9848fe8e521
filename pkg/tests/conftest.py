import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from regge_einstein.harness import GraphMetric3D, level_mesh
from regge_einstein.mesh import generate_box_mesh
from regge_einstein.regge import interpolate

settings.register_profile("repo", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")


@pytest.fixture(scope="session")
def cube0():
    return generate_box_mesh(3, 0)


@pytest.fixture(scope="session")
def cube1():
    return generate_box_mesh(3, 1)


@pytest.fixture(scope="session")
def pcube1():
    return level_mesh(3, 1, 42)


@pytest.fixture(scope="session")
def graph3d():
    return GraphMetric3D()


@pytest.fixture(scope="session")
def gh1(pcube1, graph3d):
    return interpolate(graph3d, pcube1, 1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance checks")
        for k in sorted(lines):
            terminalreporter.write_line(lines[k])
