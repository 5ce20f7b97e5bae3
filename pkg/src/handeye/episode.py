"""Episode records and the shared grasp-attempt runner.

Every policy (servo, random, open-loop, geometric) produces the same
`Episode` structure and is labeled by the same drop-test detector.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import sim
from .sim import MotorCommand, Pose

BRANCHES = ("close", "move", "raise", "random", "forced", "blind", "fallback")


@dataclass(frozen=True)
class Decision:
    kind: str  # one of BRANCHES
    command: MotorCommand
    best_probability: float = float("nan")
    null_probability: float = float("nan")


@dataclass
class StepRecord:
    image: np.ndarray | None  # uint8 (H, W, C); None for steps executed without observing
    pose: np.ndarray  # float32 (x, y, z, theta)
    command: np.ndarray  # float32 executed command, 5 values
    branch: str
    best_probability: float = float("nan")
    null_probability: float = float("nan")


@dataclass
class Episode:
    robot_id: int
    index: int
    pregrasp: np.ndarray  # uint8 (H, W, C), gripper out of view
    steps: list = field(default_factory=list)
    label: int | None = None
    grasped: bool = False  # simulator ground truth, never used for learning
    final_aperture: float = 0.0
    info: dict = field(default_factory=dict)  # policy telemetry, not persisted

    @property
    def T(self):
        return len(self.steps)

    @property
    def images_captured(self):
        return sum(s.image is not None for s in self.steps)

    def branch_counts(self):
        out = {}
        for s in self.steps:
            out[s.branch] = out.get(s.branch, 0) + 1
        return out


def to_u8(img):
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def observe(world):
    """Camera frame as stored (8-bit) and as seen by the learner (float in [0, 1])."""
    u8 = to_u8(sim.render(world))
    return u8, u8.astype(np.float64) / 255.0


def pose_record(pose):
    return np.array([pose.x, pose.y, pose.z, pose.theta], dtype=np.float32)


def random_start(world, rng, raise_band=(0.04, 0.10)):
    """Gripper to a random pose above the bin, without contact."""
    xmin, xmax, ymin, ymax = world.config.workspace
    pose = Pose(float(rng.uniform(xmin, xmax)), float(rng.uniform(ymin, ymax)),
                float(rng.uniform(*raise_band)), float(rng.uniform(-math.pi, math.pi)))
    return sim.set_gripper(world, pose)


def random_command(pose, config, rng, max_height=0.10):
    """Uniform feasible command: target uniform over the workspace, any yaw change."""
    xmin, xmax, ymin, ymax = config.workspace
    tx, ty = rng.uniform(xmin, xmax), rng.uniform(ymin, ymax)
    tz = rng.uniform(config.table_height, config.table_height + max_height)
    return MotorCommand.from_angle(tx - pose.x, ty - pose.y, tz - pose.z, rng.uniform(-math.pi, math.pi))


def begin_episode(world, rng, robot_id=0, index=0, raise_band=(0.04, 0.10)):
    """Capture the gripper-free pregrasp image, then move to a random start pose."""
    world = sim.raise_out_of_view(world)
    pregrasp, _ = observe(world)
    world = random_start(world, rng, raise_band)
    return Episode(robot_id, index, pregrasp), world


def execute(world, decision):
    return sim.step(world, decision.command)


def finish_episode(episode, world, replace_object=True, detector=None):
    """Close the gripper, run the drop test, and label the episode.

    Returns the world for the next attempt: the held object is dropped back
    into the bin when `replace_object`, otherwise taken out of the bin.
    """
    world, outcome = sim.close_gripper(world)
    lifted = sim.raise_out_of_view(world)
    dropped = sim.release_over_bin(lifted)
    detector = detector or {}
    episode.label = sim.detect_success(lifted, dropped, outcome, **detector)
    episode.grasped = outcome.success
    episode.final_aperture = outcome.final_aperture
    return dropped if replace_object else sim.discard_held(lifted)


def close_here(episode, world, decision, observe_image=True):
    """Lower onto the table if raised and record the closing step."""
    if world.gripper.z > world.config.table_height + 1e-12:
        world = sim.descend_to_table(world)
    u8 = observe(world)[0] if observe_image else None
    episode.steps.append(StepRecord(u8, pose_record(world.gripper), sim.NULL_COMMAND.as_array().astype(np.float32),
                                    decision.kind, decision.best_probability, decision.null_probability))
    return world


def run_episode(world, choose, max_steps, rng, robot_id=0, index=0, replace_object=True,
                raise_band=(0.04, 0.10), detector=None):
    """Closed-loop attempt: observe, decide, act, until a close or step `max_steps`.

    `choose(I0, It, pose, t)` returns a `Decision`. The last step is always a close.
    """
    if max_steps < 1:
        raise ValueError("max_steps must be >= 1")
    episode, world = begin_episode(world, rng, robot_id, index, raise_band)
    i0 = episode.pregrasp.astype(np.float64) / 255.0
    for t in range(1, max_steps + 1):
        u8, img = observe(world)
        pose = world.gripper
        if t == max_steps:
            decision = Decision("forced", sim.NULL_COMMAND)
        else:
            decision = choose(i0, img, pose, t)
        if decision.kind in ("close", "forced"):
            world = close_here(episode, world, decision)
            break
        episode.steps.append(StepRecord(u8, pose_record(pose), decision.command.as_array().astype(np.float32),
                                        decision.kind, decision.best_probability, decision.null_probability))
        world = execute(world, decision)
    world = finish_episode(episode, world, replace_object, detector)
    return episode, world


def random_chooser(config, rng, max_height=0.10):
    def choose(i0, it, pose, t):
        return Decision("random", random_command(pose, config, rng, max_height))
    return choose
