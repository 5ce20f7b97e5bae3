import math

import numpy as np
import pytest

from handeye import sim
from handeye.sim import Pose, SimObject


def disc(obj_id, x, y, radius, height=0.03, softness=0.0, albedo=0.6):
    return SimObject(obj_id, "disc", (x, y), 0.0, softness, albedo, height, 2 * radius, radius=radius)


def square(obj_id, x, y, half, height=0.03, softness=0.0, albedo=0.6, shape="box", orientation=0.0):
    verts = ((-half, -half), (half, -half), (half, half), (-half, half))
    return SimObject(obj_id, shape, (x, y), orientation, softness, albedo, height, 2 * math.sqrt(2) * half,
                     vertices=verts)


def rect(obj_id, x, y, half_u, half_n, height=0.03, softness=0.0, albedo=0.6, shape="box", orientation=0.0):
    verts = ((-half_u, -half_n), (half_u, -half_n), (half_u, half_n), (-half_u, half_n))
    return SimObject(obj_id, shape, (x, y), orientation, softness, albedo, height,
                     2 * math.hypot(half_u, half_n), vertices=verts)


def world_with(objects, pose=Pose(0.0, 0.0, 0.0, 0.0), variation=None, **config):
    cfg = sim.SceneConfig(n_objects=0, slip_gain=config.pop("slip_gain", 0.0), **config)
    w = sim.spawn_scene(cfg, 0, variation)
    w.objects = list(objects)
    w.next_id = len(objects)
    w.gripper = pose
    return w


@pytest.fixture
def empty_world():
    return world_with([])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# --- acceptance reporting -----------------------------------------------------------------------

_CRITERIA = {}


@pytest.fixture
def report():
    """Records one PASS/FAIL line for an acceptance criterion."""
    def record(number, title, ok, detail):
        line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
        _CRITERIA[number] = line
        print(line)
    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[number])
