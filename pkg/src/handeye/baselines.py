"""Comparison policies: random grasping, open-loop learned grasping, and a geometric grasper.

The open-loop and geometric policies are granted the robot's true camera
calibration; the servo never is. All policies emit the same `Episode`
record and are labeled by the same drop-test detector.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import episode as ep
from . import servo, sim
from .geometry import wrap_angle
from .sim import MotorCommand, Pose

FOUR_CONNECTED = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]])


@dataclass(frozen=True)
class Calibration:
    """True camera transform of one robot."""

    camera_offset: tuple
    camera_rotation: float
    camera_scale: float

    @classmethod
    def from_variation(cls, variation):
        return cls(tuple(variation.camera_offset), variation.camera_rotation, variation.camera_scale)

    def as_variation(self):
        return sim.RobotVariation(camera_offset=self.camera_offset, camera_rotation=self.camera_rotation,
                                  camera_scale=self.camera_scale)

    def pixel_to_robot(self, config, row, col):
        return sim.unproject(config, self.as_variation(), row, col)

    def robot_to_pixel(self, config, xy):
        return sim.project(config, self.as_variation(), xy)


@dataclass(frozen=True)
class OpenLoopConfig:
    cem: servo.CemConfig = servo.CemConfig()
    approach_height: float = 0.10
    max_rotation: float = math.pi


@dataclass(frozen=True)
class GeometricConfig:
    height_eps: float = 0.002
    max_width: float = 0.07  # widest segment the gripper can close across
    min_pixels: int = 4
    max_splits: int = 3
    approach_height: float = 0.10


@dataclass
class SegmentedObject:
    footprint: np.ndarray  # boolean pixel mask
    center: np.ndarray  # robot-frame (x, y)
    major: float
    minor: float
    orientation: float  # angle of the major axis in the robot frame

    def __post_init__(self):
        if not self.footprint.any():
            raise ValueError("segment footprint is empty")
        if self.major < self.minor:
            raise ValueError("extents must be ordered major >= minor")


# --- shared task-space controller ---------------------------------------------------------------

def move_to(world, target, approach_height=0.10):
    """Blind execution: travel at approach height to the target, then descend onto the table."""
    g = world.gripper
    z = max(g.z, world.config.table_height + approach_height)
    dtheta = wrap_angle(target.theta - g.theta)
    world = sim.step(world, MotorCommand.from_angle(target.x - g.x, target.y - g.y, z - g.z, dtheta))
    return sim.descend_to_table(world)


def _grasp_blind(episode, world, target, approach_height, branch, info, u8):
    """Record the decision step, execute blind, and record the closing step without an image."""
    pose = world.gripper
    cmd = MotorCommand.from_angle(target.x - pose.x, target.y - pose.y, world.config.table_height - pose.z,
                                  wrap_angle(target.theta - pose.theta))
    episode.steps.append(ep.StepRecord(u8, ep.pose_record(pose), cmd.as_array().astype(np.float32), branch,
                                       info.pop("best_probability", float("nan")), float("nan")))
    episode.info.update(info)
    world = move_to(world, target, approach_height)
    return ep.close_here(episode, world, ep.Decision("blind", sim.NULL_COMMAND), observe_image=False)


# --- random -------------------------------------------------------------------------------------

def random_policy(world, rng, T=2, robot_id=0, index=0, replace_object=True, detector=None, max_height=0.10):
    """T - 1 uniform random moves, then close; returns (episode, next world)."""
    choose = ep.random_chooser(world.config, rng, max_height)
    return ep.run_episode(world, choose, T, rng, robot_id, index, replace_object, (0.04, max_height), detector)


# --- open loop ----------------------------------------------------------------------------------

def open_loop_policy(world, g, calib, rng, config=OpenLoopConfig(), robot_id=0, index=0,
                     replace_object=True, detector=None):
    """One image, one CEM inference, blind execution of the chosen grasp."""
    episode, world = ep.begin_episode(world, rng, robot_id, index)
    i0 = episode.pregrasp.astype(np.float64) / 255.0
    u8, img = ep.observe(world)
    pose = world.gripper
    constraints = servo.Constraints.from_scene(world.config, config.max_rotation)
    v, p = servo.cem_infer(g, i0, img, pose, constraints, config.cem, rng)
    target = Pose(pose.x + v.dx, pose.y + v.dy, world.config.table_height, wrap_angle(pose.theta + v.dtheta))
    # the calibration expresses the chosen grasp point in the image (telemetry only)
    row, col = calib.robot_to_pixel(world.config, (target.x, target.y))
    info = {"best_probability": p, "target_pixel": (float(row), float(col))}
    world = _grasp_blind(episode, world, target, config.approach_height, "move", info, u8)
    world = ep.finish_episode(episode, world, replace_object, detector)
    return episode, world


# --- geometric ----------------------------------------------------------------------------------

def _box(points, pixel_size):
    """Oriented bounding box of robot-frame points via their principal axes."""
    center = points.mean(axis=0)
    if len(points) > 1:
        cov = np.cov((points - center).T)
        evals, evecs = np.linalg.eigh(cov)
        major_axis = evecs[:, np.argmax(evals)]
    else:
        major_axis = np.array([1.0, 0.0])
    angle = math.atan2(major_axis[1], major_axis[0])
    u = np.array([math.cos(angle), math.sin(angle)])
    n = np.array([-u[1], u[0]])
    pu, pn = (points - center) @ u, (points - center) @ n
    mid = center + 0.5 * (pu.max() + pu.min()) * u + 0.5 * (pn.max() + pn.min()) * n
    ext_u, ext_n = pu.max() - pu.min() + pixel_size, pn.max() - pn.min() + pixel_size
    if ext_n > ext_u:
        ext_u, ext_n, angle = ext_n, ext_u, angle + math.pi / 2
    return mid, float(ext_u), float(ext_n), float(wrap_angle(angle))


def _split(mask, pts, pixel_size, config, depth=0):
    """Cut a too-wide segment across its major axis at its narrowest cross-section."""
    points = pts[mask]
    center, major, minor, angle = _box(points, pixel_size)
    if minor <= config.max_width or depth >= config.max_splits or mask.sum() < 2 * config.min_pixels:
        return [SegmentedObject(mask, center, major, minor, angle)]
    u = np.array([math.cos(angle), math.sin(angle)])
    n = np.array([-u[1], u[0]])
    s = (pts - center) @ u
    bins = np.arange(s[mask].min(), s[mask].max() + pixel_size, pixel_size)
    lo, hi = int(0.2 * len(bins)), max(int(0.8 * len(bins)), int(0.2 * len(bins)) + 1)
    widths = []
    for b in bins[lo:hi]:
        sel = mask & (np.abs(s - b) <= 0.5 * pixel_size)
        w = (pts[sel] - center) @ n
        widths.append(w.max() - w.min() if len(w) else 0.0)
    cut = bins[lo + int(np.argmin(widths))] if widths else 0.0
    parts = []
    for side in (mask & (s < cut), mask & (s >= cut)):
        labels, k = ndimage.label(side, structure=FOUR_CONNECTED)
        for j in range(1, k + 1):
            comp = labels == j
            if comp.sum() >= config.min_pixels:
                parts.extend(_split(comp, pts, pixel_size, config, depth + 1))
    return parts or [SegmentedObject(mask, center, major, minor, angle)]


def segment_heightmap(heightmap, calib, scene_config, config=GeometricConfig()):
    """Threshold, 4-connected components, and splitting of segments too wide to grasp."""
    hm = np.asarray(heightmap, dtype=float)
    if hm.ndim == 3:
        hm = hm[..., 0]
    pts = sim.pixel_points(scene_config, calib.as_variation())
    pixel_size = 1.0 / (scene_config.pixels_per_meter * calib.camera_scale)
    labels, k = ndimage.label(hm > config.height_eps, structure=FOUR_CONNECTED)
    segments = []
    for j in range(1, k + 1):
        comp = labels == j
        if comp.sum() >= config.min_pixels:
            segments.extend(_split(comp, pts, pixel_size, config))
    return segments


def grasp_pose(segment, current_theta, table_height=0.0):
    """Center of the box, fingers closing across its minor extent, nearest equivalent yaw."""
    theta = segment.orientation + math.pi / 2
    # the gripper is symmetric under a half turn; pick the closer of the two yaws
    if abs(wrap_angle(theta + math.pi - current_theta)) < abs(wrap_angle(theta - current_theta)):
        theta += math.pi
    return Pose(float(segment.center[0]), float(segment.center[1]), table_height, float(wrap_angle(theta)))


def geometric_policy(world, calib, rng, config=GeometricConfig(), robot_id=0, index=0, replace_object=True,
                     detector=None):
    """Heightmap segmentation and an oriented-box grasp on the segment nearest the gripper."""
    episode, world = ep.begin_episode(world, rng, robot_id, index)
    u8, _ = ep.observe(world)
    segments = segment_heightmap(sim.render_heightmap(world), calib, world.config, config)
    g = world.gripper
    if segments:
        here = np.array([g.x, g.y])
        seg = min(segments, key=lambda s: float(np.linalg.norm(s.center - here)))
        target = grasp_pose(seg, g.theta, world.config.table_height)
        info, branch = {"segments": len(segments)}, "move"
    else:
        xmin, xmax, ymin, ymax = world.config.workspace
        target = Pose(float(rng.uniform(xmin, xmax)), float(rng.uniform(ymin, ymax)), world.config.table_height,
                      float(rng.uniform(-math.pi, math.pi)))
        info, branch = {"segments": 0, "fallback": True}, "fallback"
    world = _grasp_blind(episode, world, target, config.approach_height, branch, info, u8)
    world = ep.finish_episode(episode, world, replace_object, detector)
    return episode, world
