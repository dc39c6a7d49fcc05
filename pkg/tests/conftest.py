import numpy as np
import pytest

from barplan.collision import CollisionWorld
from barplan.kinematics import load_robot
from barplan.model import structure_from_dict


def doc(nodes, bars, mode="extrusion", radius=0.004, **extra):
    """Structure document from node coordinates and (a, b) index pairs."""
    d = {
        "format_version": 1,
        "mode": mode,
        "nodes": [{"id": i, "xyz": list(map(float, p))} for i, p in enumerate(nodes)],
        "elements": [{"id": i, "ends": list(e), "radius": radius} for i, e in enumerate(bars)],
    }
    d.update(extra)
    return d


def build(nodes, bars, mode="extrusion", **kw):
    return structure_from_dict(doc(nodes, bars, mode, **kw))


@pytest.fixture(scope="session")
def robot():
    return load_robot()


@pytest.fixture
def stack2():
    return build([(0.5, 0, 0), (0.5, 0, 0.1), (0.5, 0, 0.2)], [(0, 1), (1, 2)])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def world_of(structure, **kw):
    return CollisionWorld.from_scene(structure, **kw)


# acceptance criteria record their verdicts here; printed after the run
ACCEPTANCE: dict[str, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(ACCEPTANCE, key=lambda k: int(k.split()[0][1:])):
        ok, detail = ACCEPTANCE[name]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
