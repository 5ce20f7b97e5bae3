import inspect
import math
from dataclasses import replace

import numpy as np
import pytest

from conftest import disc, rect, square, world_with
from handeye import geometry as geo
from handeye import servo, sim
from handeye.sim import GraspOutcome, MotorCommand, Pose


# --- types --------------------------------------------------------------------------------------

def test_null_command_is_exact():
    assert MotorCommand.null().as_array().tolist() == [0.0, 0.0, 0.0, 0.0, 1.0]


def test_motor_command_rejects_non_unit_rotation():
    with pytest.raises(ValueError):
        MotorCommand(0.0, 0.0, 0.0, 0.5, 0.5)


def test_from_angle_round_trips_dtheta():
    for a in np.linspace(-3.1, 3.1, 13):
        assert MotorCommand.from_angle(0, 0, 0, a).dtheta == pytest.approx(a, abs=1e-12)


def test_wrap_angle_range():
    for a in (-7.0, -math.pi, 0.0, math.pi, 4.0, 100.0):
        w = geo.wrap_angle(a)
        assert -math.pi < w <= math.pi
        assert math.isclose(math.sin(w), math.sin(a), abs_tol=1e-9)


# --- spawn_scene --------------------------------------------------------------------------------

def test_spawn_empty_scene():
    w = sim.spawn_scene(sim.SceneConfig(n_objects=0), 7)
    assert w.objects == []
    assert w.gripper == sim.home_pose(w.config)


def test_spawn_is_deterministic():
    cfg = sim.SceneConfig(n_objects=5, shape_weights=(("disc", 1.0),))
    a, b = sim.spawn_scene(cfg, 42), sim.spawn_scene(cfg, 42)
    assert a.objects == b.objects
    assert all(o.is_disc for o in a.objects)
    assert np.array_equal(sim.render(a), sim.render(b))


def test_spawn_mixed_scene_separated_and_inside():
    cfg = sim.SceneConfig(n_objects=8)
    w = sim.spawn_scene(cfg, 1)
    assert len(w.objects) == 8
    for i, a in enumerate(w.objects):
        assert abs(a.position[0]) < cfg.bin_half and abs(a.position[1]) < cfg.bin_half
        assert cfg.min_len - 1e-9 <= a.longest_axis <= max(cfg.max_len, 0.07) + 1e-9
        assert 0.0 <= a.softness <= 1.0
        if not a.is_disc:
            assert geo.polygon_area(a.polygon()) > 0
        for b in w.objects[i + 1:]:
            assert sim.separation(a, b) > 0


def test_spawn_rejects_impossible_placement():
    cfg = sim.SceneConfig(n_objects=60, max_placement_attempts=20)
    with pytest.raises(sim.PlacementError):
        sim.spawn_scene(cfg, 3)


def test_train_and_eval_splits_disjoint():
    def props(split):
        w = sim.spawn_scene(sim.SceneConfig(n_objects=10, split=split), 11)
        return [(o.softness, o.albedo) for o in w.objects]
    band = (0.9 - 0.4) / 10
    for split, parity in (("train", 0), ("eval", 1)):
        for soft, albedo in props(split):
            assert int((albedo - 0.4) // band) % 2 == parity


# --- step ---------------------------------------------------------------------------------------

def test_null_step_keeps_pose():
    w = world_with([], Pose(0.0, 0.0, 0.1, 0.0))
    assert sim.step(w, MotorCommand.null()).gripper == Pose(0.0, 0.0, 0.1, 0.0)


def test_pure_translation():
    w = world_with([], Pose(0.0, 0.0, 0.1, 0.0))
    g = sim.step(w, MotorCommand(0.1, 0.0, 0.0, 0.0, 1.0)).gripper
    assert (g.x, g.y, g.z, g.theta) == pytest.approx((0.1, 0.0, 0.1, 0.0), abs=1e-15)


def test_step_clamps_to_workspace():
    w = world_with([], Pose(0.1, 0.1, 0.1, 0.0))
    g = sim.step(w, MotorCommand(1.0, -1.0, 1.0)).gripper
    assert (g.x, g.y, g.z) == (0.18, -0.18, w.config.home_z)


def test_push_displacement_equals_gain_times_depth():
    # right finger sweeps x = 0.0425 from y = -0.1 to 0; disc center 0.015 off that line
    obj = disc(0, 0.0575, -0.02, 0.02, height=0.03)
    w = world_with([obj], Pose(0.0, -0.1, 0.0, 0.0))
    after = sim.step(w, MotorCommand(0.0, 0.1, 0.0))
    r_f = 0.5 * max(w.config.finger_width, w.config.finger_length)
    depth = r_f - (0.015 - 0.02)
    moved = after.objects[0].center - obj.center
    assert moved == pytest.approx([0.0, w.config.push_gain * depth], abs=1e-12)


def test_no_push_above_object_height():
    obj = disc(0, 0.0575, -0.02, 0.02, height=0.03)
    w = world_with([obj], Pose(0.0, -0.1, 0.05, 0.0))
    assert sim.step(w, MotorCommand(0.0, 0.1, 0.0)).objects[0] == obj


def test_push_polygon_matches_disc_depth_rule():
    obj = square(0, 0.0425, 0.0, 0.02)
    w = world_with([obj], Pose(0.0, -0.1, 0.0, 0.0))
    after = sim.step(w, MotorCommand(0.0, 0.05, 0.0))
    # finger center ends at y = -0.05; square face at y = -0.02, so depth = 0.01 - 0.03 < 0: no contact
    assert after.objects[0] == obj
    after = sim.step(w, MotorCommand(0.0, 0.085, 0.0))
    # finger ends at y = -0.015, 0.005 inside the face: depth = r_f + 0.005 = 0.015
    assert after.objects[0].center[1] == pytest.approx(0.015, abs=1e-6)


def test_transitivity_contact_free():
    rng = np.random.default_rng(5)
    w = world_with([], Pose(0.0, 0.0, 0.15, 0.3))
    for _ in range(200):
        a = MotorCommand.from_angle(*rng.uniform(-0.05, 0.05, 3), rng.uniform(-3, 3))
        b = MotorCommand.from_angle(*rng.uniform(-0.05, 0.05, 3), rng.uniform(-3, 3))
        two = sim.step(sim.step(w, a), b).gripper
        one = sim.step(w, a.compose(b)).gripper
        assert two.as_array()[:3] == pytest.approx(one.as_array()[:3], abs=1e-9)
        assert abs(geo.wrap_angle(two.theta - one.theta)) < 1e-9


def test_actuation_noise_only_in_plane():
    var = sim.RobotVariation(actuation_noise_sigma=0.01)
    w = world_with([], Pose(0.0, 0.0, 0.1, 0.0), var)
    g = sim.step(w, MotorCommand(0.0, 0.0, -0.05)).gripper
    assert g.z == pytest.approx(0.05)
    assert (g.x, g.y) != (0.0, 0.0)


# --- render -------------------------------------------------------------------------------------

def test_render_empty_scene_background_and_walls():
    w = world_with([], Pose(0.0, 0.0, 0.3, 0.0), supersample=1)
    img = sim.render(w)
    assert img.shape == (64, 64, 1)
    assert set(np.unique(img)) == {sim.WALL_INTENSITY, sim.TABLE_INTENSITY}
    # area sampling blends pixels straddling the wall edge, nothing else
    smooth = sim.render(world_with([], Pose(0.0, 0.0, 0.3, 0.0)))
    assert smooth.min() >= sim.WALL_INTENSITY and smooth.max() <= sim.TABLE_INTENSITY
    mixed = (smooth != sim.WALL_INTENSITY) & (smooth != sim.TABLE_INTENSITY)
    assert 0 < mixed.sum() <= 4 * 64 * 2


def test_subpixel_object_visible_with_area_sampling():
    stick = rect(0, 0.01, 0.02, 0.03, 0.0025, height=0.01, shape="stick", orientation=0.4)
    counts = {}
    for sub in (1, 3):
        empty = sim.render(world_with([], supersample=sub))
        counts[sub] = sim.changed_pixels(empty, sim.render(world_with([stick], supersample=sub)))
    assert counts[3] > 10 >= counts[1]


def test_render_values_in_unit_interval_and_deterministic():
    w = sim.spawn_scene(sim.SceneConfig(n_objects=8), 3)
    w = sim.set_gripper(w, Pose(0.0, 0.0, 0.0, 0.5))
    a, b = sim.render(w), sim.render(w)
    assert np.array_equal(a, b)
    assert a.min() >= 0.0 and a.max() <= 1.0
    assert np.any(a == sim.GRIPPER_INTENSITY)


def test_gripper_hidden_above_visibility_height():
    w = world_with([], Pose(0.0, 0.0, 0.3, 0.0))
    assert not np.any(sim.render(w) == sim.GRIPPER_INTENSITY)


def _centroid(img, value):
    r, c = np.nonzero(np.isclose(img[..., 0], value))
    return np.array([r.mean(), c.mean()])


def test_camera_offset_shifts_scene():
    obj = disc(0, 0.03, -0.02, 0.03, albedo=0.7)
    base = world_with([obj], Pose(0, 0, 0.3, 0))
    var = sim.RobotVariation(camera_offset=(0.0125, -0.025))
    moved = world_with([obj], Pose(0, 0, 0.3, 0), var)
    shift = _centroid(sim.render(moved), 0.7) - _centroid(sim.render(base), 0.7)
    expected = np.subtract(sim.project(moved.config, var, obj.center),
                           sim.project(base.config, sim.RobotVariation(), obj.center))
    assert shift == pytest.approx(expected, abs=0.05)
    assert expected == pytest.approx([-4.0, -2.0])


def test_project_unproject_inverse():
    cfg = sim.SceneConfig()
    var = sim.RobotVariation((0.01, -0.004), 0.05, 1.04)
    for xy in ([0.0, 0.0], [0.1, -0.07], [-0.15, 0.12]):
        row, col = sim.project(cfg, var, xy)
        assert sim.unproject(cfg, var, row, col) == pytest.approx(xy, abs=1e-12)


def test_heightmap_empty_and_single_disc():
    assert not sim.render_heightmap(world_with([])).any()
    hm = sim.render_heightmap(world_with([disc(0, 0.0, 0.0, 0.03, height=0.05)]))
    assert hm.max() == 0.05


def test_heightmap_adjacent_objects_two_plateaus():
    from scipy import ndimage
    a = square(0, -0.02, 0.0, 0.02, height=0.02)
    b = square(1, 0.02, 0.0, 0.02, height=0.04)
    hm = sim.render_heightmap(world_with([a, b]))[..., 0]
    labels, k = ndimage.label(hm > 0)
    assert k == 1
    assert set(np.unique(hm[hm > 0])) == {0.02, 0.04}


# --- grasping -----------------------------------------------------------------------------------

def test_grasp_centered_rigid_disc():
    w = world_with([disc(0, 0.0, 0.0, 0.025)])
    after, out = sim.close_gripper(w)
    assert out.success and out.grasped_object == 0
    assert out.final_aperture == pytest.approx(0.05)
    assert after.holding == 0 and after.objects == []


def test_grasp_empty_table():
    _, out = sim.close_gripper(world_with([]))
    assert out == GraspOutcome(None, 0.0)


def test_grasp_requires_table_height():
    with pytest.raises(ValueError):
        sim.close_gripper(world_with([], Pose(0, 0, 0.05, 0)))


def test_soft_pinch_grasp():
    # square centered on the right finger: that footprint lies inside, the left finger is clear
    soft = square(0, 0.0425, 0.0, 0.03, softness=0.9)
    _, out = sim.close_gripper(world_with([soft]))
    assert out.success
    width = 0.0425 - (0.0425 - 0.03)
    assert out.final_aperture == pytest.approx(width * (1 - 0.9 * 0.7))


def test_rigid_object_under_finger_blocks():
    rigid = square(0, 0.0425, 0.0, 0.03, softness=0.1)
    _, out = sim.close_gripper(world_with([rigid]))
    assert not out.success


def test_two_objects_between_fingers_fail():
    w = world_with([disc(0, -0.015, 0.0, 0.01), disc(1, 0.015, 0.0, 0.01)])
    assert not sim.close_gripper(w)[1].success


def test_object_wider_than_aperture_fails():
    w = world_with([rect(0, 0.0, 0.0, 0.06, 0.01)])
    assert not sim.close_gripper(w)[1].success


def test_close_deterministic_without_slip():
    w = sim.spawn_scene(sim.SceneConfig(n_objects=8, slip_gain=0.0), 9)
    for o in w.objects:
        w2 = sim.set_gripper(w, Pose(*o.center, 0.0, 0.7))
        assert sim.close_gripper(w2)[1] == sim.close_gripper(w2)[1]


def test_finger_wear_changes_geometry():
    var = sim.RobotVariation(finger_length_wear=0.004, finger_width_wear=0.003)
    w = world_with([], variation=var)
    _, width, length = w.finger_geometry()
    assert width == pytest.approx(0.013) and length == pytest.approx(0.016)


# --- success detection --------------------------------------------------------------------------

def _drop(world):
    after, outcome = sim.close_gripper(world)
    lifted = sim.raise_out_of_view(after)
    return lifted, sim.release_over_bin(lifted), outcome


def test_detect_nothing_held():
    lifted, dropped, out = _drop(world_with([disc(0, 0.1, 0.1, 0.02)]))
    assert np.array_equal(sim.render(lifted), sim.render(dropped))
    assert sim.detect_success(lifted, dropped, out) == 0


def test_detect_thick_object_by_aperture():
    w = world_with([])
    assert sim.detect_success(w, w, GraspOutcome(3, 0.04), aperture_threshold=0.01) == 1


def test_detect_flat_object_by_drop_test():
    flat = rect(0, 0.0, 0.0, 0.004, 0.035, height=0.004, shape="flat")
    lifted, dropped, out = _drop(world_with([flat]))
    assert out.success and out.final_aperture <= 0.01
    assert sim.changed_pixels(sim.render(lifted), sim.render(dropped)) > 10
    assert sim.detect_success(lifted, dropped, out) == 1


def test_detect_dimension_mismatch():
    a = world_with([])
    b = world_with([], image_size=32)
    with pytest.raises(ValueError):
        sim.detect_success(a, b, GraspOutcome(None, 0.0))


def test_detector_agrees_with_ground_truth_sample():
    rng = np.random.default_rng(0)
    agree, n = 0, 300
    for i in range(n):
        w = sim.spawn_scene(sim.SceneConfig(n_objects=6), i)
        target = w.objects[int(rng.integers(len(w.objects)))].center + rng.normal(0, 0.01, 2)
        w = sim.set_gripper(w, Pose(*target, 0.0, rng.uniform(-3, 3)))
        lifted, dropped, out = _drop(w)
        agree += sim.detect_success(lifted, dropped, out) == int(out.success)
    assert agree / n >= 0.98


# --- fleet and interfaces -----------------------------------------------------------------------

def test_fleet_is_seeded_and_varied():
    a = sim.make_fleet(sim.FleetConfig(n_robots=3), 4)
    assert a == sim.make_fleet(sim.FleetConfig(n_robots=3), 4)
    assert len({v.camera_offset for v in a}) == 3
    assert all(v.actuation_noise_sigma == pytest.approx(0.0072) for v in a)


def test_servo_entry_points_take_no_camera_parameters():
    fields = {"camera_offset", "camera_rotation", "camera_scale", "variation", "calib", "world"}
    for fn in (servo.decide, servo.cem_infer, servo.sample_constrained, servo.project_to_table):
        assert not fields & set(inspect.signature(fn).parameters)


def test_world_invariants_after_random_steps():
    w = sim.spawn_scene(sim.SceneConfig(n_objects=8), 2)
    w = replace(w.copy(), gripper=Pose(0.0, 0.0, 0.0, 0.0))
    rng = np.random.default_rng(3)
    cfg = w.config
    for _ in range(50):
        w = sim.step(w, MotorCommand.from_angle(*rng.uniform(-0.1, 0.1, 2), 0.0, rng.uniform(-1, 1)))
        g = w.gripper
        assert -cfg.bin_half <= g.x <= cfg.bin_half and -cfg.bin_half <= g.y <= cfg.bin_half
        assert g.z >= 0.0 and -math.pi < g.theta <= math.pi
        for o in w.objects:
            assert abs(o.position[0]) <= cfg.bin_half and abs(o.position[1]) <= cfg.bin_half
