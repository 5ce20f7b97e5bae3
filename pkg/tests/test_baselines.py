import inspect
import math

import numpy as np
import pytest

from conftest import disc, rect, world_with
from handeye import baselines as B
from handeye import geometry as geo
from handeye import servo, sim
from handeye.sim import Pose

CALIB = B.Calibration((0.0, 0.0), 0.0, 1.0)


def _segments(objects, calib=CALIB, variation=None, **kw):
    w = world_with(objects, Pose(0, 0, 0.3, 0), variation)
    return B.segment_heightmap(sim.render_heightmap(w), calib, w.config, B.GeometricConfig(**kw))


# --- random -------------------------------------------------------------------------------------

def test_random_on_empty_scene_always_fails():
    w = world_with([])
    rng = np.random.default_rng(0)
    for i in range(10):
        e, w = B.random_policy(w, rng, index=i)
        assert e.label == 0 and e.T == 2
        assert [s.branch for s in e.steps] == ["random", "forced"]


def test_random_reproducible():
    w = sim.spawn_scene(sim.SceneConfig(n_objects=8), 4)
    a, _ = B.random_policy(w, np.random.default_rng(3))
    b, _ = B.random_policy(w, np.random.default_rng(3))
    assert a.label == b.label and all(np.array_equal(s.pose, t.pose) for s, t in zip(a.steps, b.steps))


def test_random_success_band_200_episodes():
    w = sim.spawn_scene(sim.SceneConfig(n_objects=8, split="eval"), 11)
    rng = np.random.default_rng(5)
    labels = []
    for i in range(200):
        e, w = B.random_policy(w, rng, index=i)
        labels.append(e.label)
    assert 0.05 <= np.mean(labels) <= 0.40


# --- calibration --------------------------------------------------------------------------------

def test_calibration_equals_variation():
    var = sim.RobotVariation((0.01, -0.02), 0.04, 1.03)
    cal = B.Calibration.from_variation(var)
    assert cal.as_variation().camera_offset == var.camera_offset
    cfg = sim.SceneConfig()
    assert cal.robot_to_pixel(cfg, (0.05, 0.02)) == pytest.approx(sim.project(cfg, var, (0.05, 0.02)))
    row, col = cal.robot_to_pixel(cfg, (0.05, 0.02))
    assert cal.pixel_to_robot(cfg, row, col) == pytest.approx([0.05, 0.02], abs=1e-12)


def test_servo_has_no_calibration_route():
    for fn in (servo.decide, servo.cem_infer, servo.run_servo_episode):
        assert "calib" not in inspect.signature(fn).parameters
    assert "calib" in inspect.signature(B.open_loop_policy).parameters
    assert "calib" in inspect.signature(B.geometric_policy).parameters


# --- open loop ----------------------------------------------------------------------------------

def _peak_predictor(target_xy, pose_xy):
    def g(i0, it, v):
        d = (v[:, 0] + pose_xy[0] - target_xy[0]) ** 2 + (v[:, 1] + pose_xy[1] - target_xy[1]) ** 2
        return np.exp(-d / 0.001)
    return g


def test_open_loop_one_image_blind_execution():
    obj = disc(0, 0.05, -0.03, 0.02)
    w = world_with([obj], Pose(0, 0, 0.3, 0))
    rng = np.random.default_rng(0)
    # the start pose is drawn by the policy from rng; replay it to build the stub
    probe = np.random.default_rng(0)
    start = B.ep.random_start(w, probe).gripper
    g = _peak_predictor((0.05, -0.03), (start.x, start.y))
    e, _ = B.open_loop_policy(w, g, CALIB, rng)
    assert e.images_captured == 1
    assert [s.branch for s in e.steps] == ["move", "blind"]
    assert e.steps[1].image is None
    assert np.hypot(*(e.steps[1].pose[:2] - [0.05, -0.03])) < 0.03
    assert "target_pixel" in e.info


# --- geometric ----------------------------------------------------------------------------------

def test_single_rectangle_grasped_across_minor_extent():
    segs = _segments([rect(0, 0.04, -0.02, 0.03, 0.012, orientation=0.3)])
    assert len(segs) == 1
    s = segs[0]
    assert s.center == pytest.approx([0.04, -0.02], abs=0.004)
    assert s.major > s.minor
    assert abs(geo.wrap_angle(2 * (s.orientation - 0.3))) < 0.15
    pose = B.grasp_pose(s, 0.0)
    # closing axis (pose.theta) perpendicular to the major axis
    assert abs(math.cos(pose.theta - s.orientation)) < 0.1
    assert (pose.x, pose.y) == pytest.approx((s.center[0], s.center[1]))


def test_grasp_pose_picks_nearer_symmetric_yaw():
    s = B.SegmentedObject(np.ones((2, 2), bool), np.zeros(2), 0.05, 0.02, 0.0)
    assert B.grasp_pose(s, 1.5).theta == pytest.approx(math.pi / 2)
    assert B.grasp_pose(s, -1.5).theta == pytest.approx(-math.pi / 2)


def test_empty_heightmap_falls_back():
    w = world_with([])
    e, _ = B.geometric_policy(w, CALIB, np.random.default_rng(0))
    assert e.steps[0].branch == "fallback" and e.info["fallback"]
    assert e.label == 0


def test_touching_pair_is_split():
    # two 5 cm squares side by side form a 10 x 5 cm blob wider than the gripper along both axes after
    # rotation; a third square stacks across to make the blob too wide to close across
    a = rect(0, -0.025, 0.0, 0.025, 0.04)
    b = rect(1, 0.025, 0.0, 0.025, 0.04)
    segs = _segments([a, b])
    assert len(segs) >= 2
    assert all(s.minor <= 0.07 + 1e-9 or s.major < 0.02 for s in segs)


def test_segment_invariants():
    w = sim.spawn_scene(sim.SceneConfig(n_objects=8), 2)
    segs = B.segment_heightmap(sim.render_heightmap(w), CALIB, w.config)
    assert segs
    for s in segs:
        assert s.footprint.any() and s.major >= s.minor


def test_segments_use_calibration():
    var = sim.RobotVariation((0.02, 0.01), 0.1, 1.02)
    obj = disc(0, 0.06, 0.05, 0.02)
    good = _segments([obj], B.Calibration.from_variation(var), var)
    bad = _segments([obj], CALIB, var)
    assert good[0].center == pytest.approx([0.06, 0.05], abs=0.004)
    assert np.hypot(*(bad[0].center - [0.06, 0.05])) > 0.01


def test_geometric_grasps_isolated_box_and_is_deterministic():
    obj = rect(0, 0.03, 0.02, 0.03, 0.015, orientation=0.7)
    w = world_with([obj], Pose(0, 0, 0.3, 0))
    a, _ = B.geometric_policy(w, CALIB, np.random.default_rng(1))
    b, _ = B.geometric_policy(w, CALIB, np.random.default_rng(1))
    assert a.label == 1 and a.grasped
    assert np.array_equal(a.steps[-1].pose, b.steps[-1].pose)
    assert a.images_captured == 1


def test_move_to_reaches_target_on_table():
    w = world_with([], Pose(0.1, 0.1, 0.05, 0.0))
    out = B.move_to(w, Pose(-0.1, 0.05, 0.0, 2.0))
    g = out.gripper
    assert (g.x, g.y, g.z) == pytest.approx((-0.1, 0.05, 0.0), abs=1e-12)
    assert g.theta == pytest.approx(2.0)
