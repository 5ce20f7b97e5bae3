"""Self-supervised data collection, sample construction and the shard format.

Collection runs a fleet of simulated robots. Episode `i` of a phase belongs
to robot ``i % n_robots`` and every robot draws from its own seeded stream,
so the collected episodes do not depend on how many worker processes run
the fleet.
"""

import json
import logging
import math
import struct
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import episode as ep
from . import net as N
from . import servo, sim
from .servo import ServoConfig
from .geometry import wrap_angle
from .sim import MotorCommand

log = logging.getLogger(__name__)

SHARD_MAGIC = b"SGDS"
SHARD_VERSION = 1


class ShardFormatError(ValueError):
    """Not a shard file, or an unsupported version."""


# --- samples ------------------------------------------------------------------------------------

@dataclass
class GraspSample:
    i0: np.ndarray
    it: np.ndarray
    displacement: MotorCommand
    label: int


def displacement(final_pose, pose):
    """Encoded p_T - p_t: translation difference and the sine/cosine of the yaw change."""
    pf, p = np.asarray(final_pose, dtype=np.float64), np.asarray(pose, dtype=np.float64)
    return MotorCommand.from_angle(pf[0] - p[0], pf[1] - p[1], pf[2] - p[2], wrap_angle(pf[3] - p[3]))


def _check_complete(episode):
    if episode.label is None or not episode.steps:
        raise ValueError(f"episode {episode.index} is incomplete (no label or no steps)")
    if any(s.image is None for s in episode.steps):
        raise ValueError(f"episode {episode.index} has steps without images")


def episode_to_samples(episode):
    """One sample per step: (I0, It, p_T - p_t, label). The last displacement is the null command."""
    _check_complete(episode)
    final = episode.steps[-1].pose
    out = []
    for s in episode.steps:
        d = displacement(final, s.pose)
        if s is episode.steps[-1]:
            d = MotorCommand.null()
        out.append(GraspSample(episode.pregrasp, s.image, d, int(episode.label)))
    return out


@dataclass
class SampleTable:
    """Training view over episodes; each pregrasp image is stored once.

    Implements the ``len`` / ``batch(idx)`` interface used by `net.train`.
    """

    pregrasp: np.ndarray  # (E, H, W, C) uint8
    current: np.ndarray  # (S, H, W, C) uint8
    episode_of: np.ndarray  # (S,) index into pregrasp
    commands: np.ndarray  # (S, 5) float64
    labels: np.ndarray  # (S,) float64

    def __len__(self):
        return len(self.labels)

    def batch(self, idx):
        return self.pregrasp[self.episode_of[idx]], self.current[idx], self.commands[idx], self.labels[idx]

    @classmethod
    def from_episodes(cls, episodes):
        if not episodes:
            raise ValueError("no episodes")
        pre, cur, owner, cmds, labels = [], [], [], [], []
        for e, episode in enumerate(episodes):
            pre.append(episode.pregrasp)
            for s in episode_to_samples(episode):
                cur.append(s.it)
                owner.append(e)
                cmds.append(s.displacement.as_array())
                labels.append(s.label)
        return cls(np.stack(pre), np.stack(cur), np.asarray(owner), np.asarray(cmds, dtype=np.float64),
                   np.asarray(labels, dtype=np.float64))


# --- datasets -----------------------------------------------------------------------------------

@dataclass
class Dataset:
    """Episodes in global collection order plus provenance metadata."""

    episodes: list
    metadata: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.episodes)

    @property
    def sample_count(self):
        return sum(e.T for e in self.episodes)

    def success_rate(self):
        return float(np.mean([e.label for e in self.episodes])) if self.episodes else float("nan")

    def samples(self):
        return SampleTable.from_episodes(self.episodes)


def dataset_slice(dataset, fraction):
    """The first ceil(fraction * episodes) episodes by collection order."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    if len(dataset) == 0:
        raise ValueError("cannot slice an empty dataset")
    ordered = sorted(dataset.episodes, key=lambda e: e.index)
    n = math.ceil(round(fraction * len(ordered), 9))
    return Dataset(ordered[:n], dict(dataset.metadata, fraction=fraction))


# --- shards -------------------------------------------------------------------------------------

def _encode_episode(e, dims):
    out = [struct.pack("<IQBBdI", e.robot_id, e.index, 255 if e.label is None else e.label, int(e.grasped),
                       e.final_aperture, len(e.steps))]
    if e.pregrasp.shape != dims:
        raise ValueError(f"pregrasp image {e.pregrasp.shape} does not match shard dims {dims}")
    out.append(np.ascontiguousarray(e.pregrasp, dtype=np.uint8).tobytes())
    for s in e.steps:
        out.append(struct.pack("<B", s.image is not None))
        if s.image is not None:
            if s.image.shape != dims:
                raise ValueError(f"step image {s.image.shape} does not match shard dims {dims}")
            out.append(np.ascontiguousarray(s.image, dtype=np.uint8).tobytes())
        out.append(np.asarray(s.pose, dtype="<f4").tobytes())
        out.append(np.asarray(s.command, dtype="<f4").tobytes())
        name = s.branch.encode("ascii")
        out.append(struct.pack("<B", len(name)) + name)
        out.append(struct.pack("<dd", s.best_probability, s.null_probability))
    return b"".join(out)


def _decode_episode(buf, dims):
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(buf):
            raise ShardFormatError("episode record shorter than its contents")
        chunk = buf[pos:pos + n]
        pos += n
        return chunk

    size = int(np.prod(dims))
    robot_id, index, label, grasped, aperture, t = struct.unpack("<IQBBdI", take(26))
    pregrasp = np.frombuffer(take(size), dtype=np.uint8).reshape(dims).copy()
    e = ep.Episode(robot_id, index, pregrasp, [], None if label == 255 else label, bool(grasped), aperture)
    for _ in range(t):
        (has_image,) = struct.unpack("<B", take(1))
        image = np.frombuffer(take(size), dtype=np.uint8).reshape(dims).copy() if has_image else None
        pose = np.frombuffer(take(16), dtype="<f4").astype(np.float32)
        command = np.frombuffer(take(20), dtype="<f4").astype(np.float32)
        (n,) = struct.unpack("<B", take(1))
        branch = take(n).decode("ascii")
        best, null = struct.unpack("<dd", take(16))
        e.steps.append(ep.StepRecord(image, pose, command, branch, best, null))
    if pos != len(buf):
        raise ShardFormatError("trailing bytes in episode record")
    return e


def write_shard(episodes, path, dims=None, metadata=None):
    """Write episodes to a self-describing shard (header, metadata, checksummed records)."""
    if dims is None:
        dims = episodes[0].pregrasp.shape if episodes else (64, 64, 1)
    dims = tuple(int(d) for d in dims)
    meta = json.dumps(metadata or {}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(SHARD_MAGIC + struct.pack("<IIIII", SHARD_VERSION, *dims, len(episodes)))
        fh.write(struct.pack("<I", len(meta)) + meta)
        for e in episodes:
            rec = _encode_episode(e, dims)
            fh.write(struct.pack("<I", len(rec)) + rec + struct.pack("<I", zlib.crc32(rec)))


def read_shard(path, with_metadata=False):
    """Episodes stored in a shard; a damaged trailing record is dropped with a warning."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 28 or data[:4] != SHARD_MAGIC:
        raise ShardFormatError(f"{path}: bad magic header")
    version, h, w, c, count = struct.unpack("<IIIII", data[4:24])
    if version != SHARD_VERSION:
        raise ShardFormatError(f"{path}: shard version {version}, expected {SHARD_VERSION}")
    (mlen,) = struct.unpack("<I", data[24:28])
    if 28 + mlen > len(data):
        raise ShardFormatError(f"{path}: truncated metadata")
    metadata = json.loads(data[28:28 + mlen].decode("utf-8"))
    pos, episodes = 28 + mlen, []
    while pos < len(data) and len(episodes) < count:
        if pos + 4 > len(data):
            break
        (n,) = struct.unpack("<I", data[pos:pos + 4])
        end = pos + 4 + n + 4
        if end > len(data):
            break
        rec = data[pos + 4:pos + 4 + n]
        (crc,) = struct.unpack("<I", data[pos + 4 + n:end])
        if zlib.crc32(rec) != crc:
            break
        episodes.append(_decode_episode(rec, (h, w, c)))
        pos = end
    if len(episodes) < count:
        log.warning("%s: recovered %d of %d episodes; dropped a damaged or truncated record",
                    path, len(episodes), count)
    return (episodes, metadata) if with_metadata else episodes


# --- collection ---------------------------------------------------------------------------------

@dataclass(frozen=True)
class Phase:
    episodes: int
    policy: str  # "random" or "eps_greedy"
    T: int
    epsilon: float = 0.1
    refit_after: bool = False

    def __post_init__(self):
        if self.episodes <= 0:
            raise ValueError("phase budget must be > 0")
        if self.policy not in ("random", "eps_greedy"):
            raise ValueError(f"unknown phase policy {self.policy!r}")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError(f"epsilon must be in [0, 1], got {self.epsilon}")
        if self.T < 1:
            raise ValueError("T must be >= 1")


@dataclass(frozen=True)
class CollectionSchedule:
    phases: tuple

    @classmethod
    def default(cls):
        """2,000 random T=2 episodes, then four greedy phases at T = 4, 6, 8, 10, refitting after each."""
        phases = [Phase(2000, "random", 2, refit_after=True)]
        phases += [Phase(1000, "eps_greedy", t, 0.1, True) for t in (4, 6, 8, 10)]
        return cls(tuple(phases))

    @property
    def total_episodes(self):
        return sum(p.episodes for p in self.phases)


@dataclass(frozen=True)
class CollectionConfig:
    scene: sim.SceneConfig = sim.SceneConfig()
    fleet: sim.FleetConfig = sim.FleetConfig()
    objects_range: tuple = (6, 10)  # object count drawn per bin refresh
    refresh_every: int = 25  # episodes per robot between bin refreshes
    servo: ServoConfig = ServoConfig()
    arch: N.ArchConfig = N.ArchConfig()
    train: N.TrainConfig = N.TrainConfig()
    # refits during collection continue from the previous snapshot
    warm_start: bool = True
    detector: tuple = (("aperture_threshold", 0.01), ("pixel_diff_threshold", 10), ("eps", 0.05))

    def __post_init__(self):
        lo, hi = self.objects_range
        if not 0 <= lo <= hi:
            raise ValueError(f"bad objects_range {self.objects_range}")
        if self.refresh_every < 1:
            raise ValueError("refresh_every must be >= 1")


def fresh_bin(config, variation, rng):
    lo, hi = config.objects_range
    n = int(rng.integers(lo, hi + 1))
    scene = sim.SceneConfig(**{**asdict(config.scene), "n_objects": n})
    return sim.spawn_scene(scene, int(rng.integers(2 ** 63)), variation)


@dataclass
class _RobotJob:
    robot_id: int
    variation: sim.RobotVariation
    indices: list  # global collection indices handled by this robot
    phase: Phase
    seed: tuple
    world: object
    served: int  # episodes run so far by this robot (drives bin refreshes)


def _run_robot(job, config, net):
    rng = np.random.default_rng(list(job.seed))
    g = N.Predictor(net) if net is not None else None
    detector = dict(config.detector)
    world, served, out = job.world, job.served, []
    for index in job.indices:
        if world is None or served % config.refresh_every == 0:
            world = fresh_bin(config, job.variation, rng)
        if job.phase.policy == "random":
            choose = ep.random_chooser(world.config, rng, config.servo.raise_band[1])
        else:
            cfg = ServoConfig(config.servo.cem, config.servo.raise_band, config.servo.max_rotation,
                                    job.phase.epsilon)
            choose = servo.servo_chooser(g, world.config, cfg, rng)
        episode, world = ep.run_episode(world, choose, job.phase.T, rng, job.robot_id, index, True,
                                        config.servo.raise_band, detector)
        out.append(episode)
        served += 1
    return out, world, served


def _run_robot_packed(args):
    return _run_robot(*args)


def refit(net, episodes, config, seed):
    """Train on all episodes so far, from `net` (warm start) or from a fresh build."""
    start = net if (net is not None and config.warm_start) else N.build_network(config.arch, seed)
    tc = N.TrainConfig(**{**asdict(config.train), "seed": seed})
    return N.train(start, SampleTable.from_episodes(episodes), tc)


def run_collection(config, schedule, seed, workers=1, net=None, on_phase=None):
    """Execute the schedule; returns (Dataset, latest network snapshot or None)."""
    variations = sim.make_fleet(config.fleet, seed)
    n_robots = len(variations)
    worlds, served = [None] * n_robots, [0] * n_robots
    episodes, offset = [], 0
    pool = ProcessPoolExecutor(workers) if workers > 1 else None
    try:
        for p, phase in enumerate(schedule.phases):
            if phase.policy == "eps_greedy" and net is None and phase.epsilon < 1.0:
                raise ValueError(f"phase {p} is greedy but no network is available; refit an earlier phase")
            jobs = []
            for r in range(n_robots):
                idx = [offset + i for i in range(phase.episodes) if i % n_robots == r]
                jobs.append(_RobotJob(r, variations[r], idx, phase, (seed, p, r), worlds[r], served[r]))
            args = [(j, config, net) for j in jobs]
            results = list(pool.map(_run_robot_packed, args)) if pool else [_run_robot(*a) for a in args]
            phase_eps = []
            for r, (eps_r, world, count) in enumerate(results):
                phase_eps.extend(eps_r)
                worlds[r], served[r] = world, count
            phase_eps.sort(key=lambda e: e.index)
            episodes.extend(phase_eps)
            offset += phase.episodes
            rate = float(np.mean([e.label for e in phase_eps]))
            log.info("phase %d (%s, T=%d): %d episodes, success %.3f", p, phase.policy, phase.T,
                     len(phase_eps), rate)
            if phase.refit_after:
                net = refit(net, episodes, config, seed + 1000 * (p + 1))
            if on_phase is not None:
                on_phase(p, phase_eps, net)
    finally:
        if pool is not None:
            pool.shutdown()
    metadata = {
        "seed": int(seed),
        "schedule": [asdict(ph) for ph in schedule.phases],
        "robots": [asdict(v) for v in variations],
    }
    return Dataset(episodes, metadata), net
