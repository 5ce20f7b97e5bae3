"""Servoing function f(I_t): constrained CEM over motor commands plus the close/raise heuristics.

The predictor `g` is any callable ``g(I0, It, commands) -> probabilities``
taking images and an (N, 5) command array. Nothing in this module sees the
camera transform; the only inputs are images, the gripper pose and commands.
"""

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import episode as ep
from .sim import MotorCommand, Pose

log = logging.getLogger(__name__)

CLOSE, MOVE, RAISE = "close", "move", "raise"
CLOSE_RATIO = 0.9  # close when p > 0.9 (strict)
RAISE_RATIO = 0.5  # raise when p <= 0.5 (inclusive)


@dataclass(frozen=True)
class CemConfig:
    n_samples: int = 64
    n_elite: int = 6
    n_iterations: int = 3
    # 25% of the 0.36 m workspace per translation axis, pi/4 for yaw
    initial_sigma: tuple = (0.09, 0.09, 0.09, math.pi / 4)
    max_rejection_attempts: int = 100
    min_sigma: float = 1e-6
    # weight of the elite std in the refit; the rest keeps the previous std
    sigma_smoothing: float = 0.5

    def __post_init__(self):
        if not 0 < self.n_elite < self.n_samples:
            raise ValueError(f"need 0 < n_elite < n_samples, got {self.n_elite}, {self.n_samples}")
        if self.n_iterations < 1:
            raise ValueError("n_iterations must be >= 1")
        if len(self.initial_sigma) != 4 or min(self.initial_sigma) <= 0:
            raise ValueError("initial_sigma needs 4 positive entries")
        if self.max_rejection_attempts < 1:
            raise ValueError("max_rejection_attempts must be >= 1")
        if not 0.0 < self.sigma_smoothing <= 1.0:
            raise ValueError("sigma_smoothing must be in (0, 1]")


@dataclass
class CemState:
    """Diagonal Gaussian over (dx, dy, dz, dtheta)."""

    mean: np.ndarray
    sigma: np.ndarray  # per-dimension standard deviation

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float).reshape(4)
        self.sigma = np.asarray(self.sigma, dtype=float).reshape(4)
        if np.any(self.sigma <= 0):
            raise ValueError("CEM covariance entries must be positive")

    @property
    def covariance(self):
        return np.diag(self.sigma ** 2)


@dataclass(frozen=True)
class Constraints:
    workspace: tuple  # (xmin, xmax, ymin, ymax) in the robot frame
    max_rotation: float = math.pi
    table_height: float = 0.0

    def __post_init__(self):
        xmin, xmax, ymin, ymax = self.workspace
        if not (xmin < xmax and ymin < ymax):
            raise ValueError(f"empty workspace {self.workspace}")

    @classmethod
    def from_scene(cls, config, max_rotation=math.pi):
        return cls(tuple(config.workspace), max_rotation, config.table_height)


@dataclass(frozen=True)
class ServoDecision:
    variant: str  # close | move | raise
    command: MotorCommand
    best_probability: float
    null_probability: float
    ratio: float
    flags: tuple = ()

    def __post_init__(self):
        if self.variant not in (CLOSE, MOVE, RAISE):
            raise ValueError(f"unknown decision variant {self.variant!r}")


@dataclass
class CemTrace:
    """Per-call telemetry: best-ever score after each iteration and fallback count."""

    best_per_iteration: list = field(default_factory=list)
    fallbacks: int = 0


def _encode(samples):
    """(N, 4) angle-space samples -> (N, 5) sine-cosine commands."""
    s = np.asarray(samples, dtype=float)
    return np.column_stack([s[:, :3], np.sin(s[:, 3]), np.cos(s[:, 3])])


def _feasible(samples, pose, c):
    xmin, xmax, ymin, ymax = c.workspace
    x, y = pose.x + samples[:, 0], pose.y + samples[:, 1]
    return (x >= xmin) & (x <= xmax) & (y >= ymin) & (y <= ymax) & (np.abs(samples[:, 3]) <= c.max_rotation)


def _clamp(samples, pose, c):
    xmin, xmax, ymin, ymax = c.workspace
    out = samples.copy()
    out[:, 0] = np.clip(pose.x + out[:, 0], xmin, xmax) - pose.x
    out[:, 1] = np.clip(pose.y + out[:, 1], ymin, ymax) - pose.y
    out[:, 3] = np.clip(out[:, 3], -c.max_rotation, c.max_rotation)
    return out


def sample_batch(state, pose, constraints, rng, n, max_attempts=100):
    """`n` independent constrained draws as an (n, 4) array, plus the number of fallbacks.

    Each row is redrawn until feasible; rows still infeasible after
    `max_attempts` draws are clamped into the workspace.
    """
    out = np.empty((n, 4))
    todo = np.arange(n)
    for _ in range(max_attempts):
        draw = state.mean + state.sigma * rng.standard_normal((len(todo), 4))
        ok = _feasible(draw, pose, constraints)
        out[todo[ok]] = draw[ok]
        todo = todo[~ok]
        if len(todo) == 0:
            return out, 0
    out[todo] = _clamp(state.mean + state.sigma * rng.standard_normal((len(todo), 4)), pose, constraints)
    return out, len(todo)


def sample_constrained(state, pose, constraints, rng, max_attempts=100):
    """One feasible command drawn from the CEM Gaussian (clamped fallback after `max_attempts`)."""
    s, fallbacks = sample_batch(state, pose, constraints, rng, 1, max_attempts)
    if fallbacks:
        log.debug("rejection sampling exhausted; clamped sample used")
    return MotorCommand.from_angle(*s[0])


def project_to_table(cmd, pose, table_height=0.0):
    """Replace the vertical component so the command ends on the table."""
    return MotorCommand(cmd.dx, cmd.dy, table_height - pose.z, cmd.sin_dtheta, cmd.cos_dtheta)


def _project_rows(v, pose, table_height):
    v = v.copy()
    v[:, 2] = table_height - pose.z
    return v


def cem_infer(g, i0, it, pose, constraints, config=CemConfig(), rng=None, trace=None):
    """Best table-projected command found by CEM and its predicted success.

    The first iteration samples a zero-mean Gaussian; later ones refit a
    diagonal Gaussian to the elites, blending the elite std with the
    previous one so the search does not collapse before reaching a distant
    optimum. The returned command is the best one scored across all
    iterations, so its score is exactly g at that command.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    state = CemState(np.zeros(4), np.asarray(config.initial_sigma, dtype=float))
    best_v, best_p = None, -np.inf
    for _ in range(config.n_iterations):
        samples, fallbacks = sample_batch(state, pose, constraints, rng, config.n_samples,
                                          config.max_rejection_attempts)
        v = _project_rows(_encode(samples), pose, constraints.table_height)
        scores = np.asarray(g(i0, it, v), dtype=float).reshape(-1)
        # stable sort keeps ties in sample order
        order = np.argsort(-scores, kind="stable")
        if scores[order[0]] > best_p:
            best_p, best_v = float(scores[order[0]]), v[order[0]]
        elite = samples[order[:config.n_elite]]
        a = config.sigma_smoothing
        sigma = a * elite.std(axis=0) + (1.0 - a) * state.sigma
        state = CemState(elite.mean(axis=0), np.maximum(sigma, config.min_sigma))
        if trace is not None:
            trace.best_per_iteration.append(best_p)
            trace.fallbacks += fallbacks
    cmd = MotorCommand(float(best_v[0]), float(best_v[1]), float(best_v[2]), float(best_v[3]), float(best_v[4]))
    return cmd, best_p


def null_command(pose, table_height=0.0):
    return MotorCommand(0.0, 0.0, table_height - pose.z, 0.0, 1.0)


def classify(null_probability, best_probability):
    """Ratio rule: returns (variant, ratio, flags)."""
    if best_probability <= 0.0:
        return CLOSE, math.inf, ("zero_best",)
    ratio = null_probability / best_probability
    if ratio > CLOSE_RATIO:
        return CLOSE, ratio, ()
    if ratio <= RAISE_RATIO:
        return RAISE, ratio, ()
    return MOVE, ratio, ()


def decide(g, i0, it, pose, constraints, config=CemConfig(), rng=None, raise_band=(0.04, 0.10)):
    """One servo decision for the current image and gripper pose."""
    rng = rng if rng is not None else np.random.default_rng(0)
    trace = CemTrace()
    v_star, p_star = cem_infer(g, i0, it, pose, constraints, config, rng, trace)
    p_null = float(np.asarray(g(i0, it, null_command(pose, constraints.table_height).as_array()[None])).reshape(-1)[0])
    variant, ratio, flags = classify(p_null, p_star)
    if trace.fallbacks:
        flags = flags + (f"fallback_samples={trace.fallbacks}",)
    if variant == CLOSE:
        cmd = MotorCommand.null()
    elif variant == RAISE:
        height = constraints.table_height + float(rng.uniform(*raise_band))
        cmd = MotorCommand(v_star.dx, v_star.dy, height - pose.z, v_star.sin_dtheta, v_star.cos_dtheta)
    else:
        cmd = v_star
    return ServoDecision(variant, cmd, p_star, p_null, ratio, flags)


@dataclass(frozen=True)
class ServoConfig:
    cem: CemConfig = CemConfig()
    raise_band: tuple = (0.04, 0.10)
    max_rotation: float = math.pi
    # probability of replacing the servo decision with a uniform random command
    epsilon: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError(f"epsilon must be in [0, 1], got {self.epsilon}")
        lo, hi = self.raise_band
        if not 0.0 <= lo <= hi:
            raise ValueError(f"bad raise band {self.raise_band}")


def servo_chooser(g, scene_config, config=ServoConfig(), rng=None):
    """Adapts `decide` (with optional epsilon-greedy exploration) to the episode runner."""
    rng = rng if rng is not None else np.random.default_rng(0)
    constraints = Constraints.from_scene(scene_config, config.max_rotation)

    def choose(i0, it, pose, t):
        if config.epsilon > 0.0 and rng.random() < config.epsilon:
            return ep.Decision("random", ep.random_command(pose, scene_config, rng, config.raise_band[1]))
        d = decide(g, i0, it, pose, constraints, config.cem, rng, config.raise_band)
        return ep.Decision(d.variant, d.command, d.best_probability, d.null_probability)

    return choose


def run_servo_episode(world, g, config=ServoConfig(), max_steps=10, rng=None, robot_id=0, index=0,
                      replace_object=True, detector=None):
    """Closed-loop grasp attempt with the servo; returns (Episode, next world)."""
    if max_steps < 1:
        raise ValueError("max_steps must be >= 1")
    rng = rng if rng is not None else np.random.default_rng(0)
    choose = servo_chooser(g, world.config, config, rng)
    return ep.run_episode(world, choose, max_steps, rng, robot_id, index, replace_object,
                          config.raise_band, detector)


def telemetry(episode):
    """One JSON line per decision: step, branch, ratio p and best probability."""
    lines = []
    for t, s in enumerate(episode.steps, start=1):
        ratio = s.null_probability / s.best_probability if s.best_probability > 0 else float("nan")
        rec = {"step": t, "branch": s.branch,
               "p": None if math.isnan(ratio) else round(ratio, 6),
               "best_probability": None if math.isnan(s.best_probability) else round(s.best_probability, 6)}
        lines.append(json.dumps(rec, sort_keys=True))
    return lines
