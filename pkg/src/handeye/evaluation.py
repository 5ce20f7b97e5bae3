"""Evaluation protocols, the dataset-size ablation, and report files.

Every policy in one comparison sees the same scene seeds and the same
per-attempt random streams (paired evaluation).
"""

import csv
import io
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import baselines as B
from . import data as D
from . import net as N
from . import servo, sim
from .servo import ServoConfig

log = logging.getLogger(__name__)

POLICIES = ("random", "geometric", "open-loop", "servo")
LEARNED = ("open-loop", "servo")
TABLE_ORDER = (("random", "random"), ("geometric", "hand-designed"), ("open-loop", "open loop"),
               ("servo", "closed-loop servo"))
CHECKPOINTS = (10, 20, 30)


@dataclass(frozen=True)
class EvalConfig:
    scene: sim.SceneConfig = sim.SceneConfig(n_objects=8, split="eval")
    n_objects_without: int = 10
    attempts_with: int = 100
    repetitions: int = 4
    attempts_without: int = 30
    T: int = 10  # servo step budget
    random_T: int = 2
    fleet: sim.FleetConfig = sim.FleetConfig()
    servo: ServoConfig = ServoConfig()
    open_loop: B.OpenLoopConfig = B.OpenLoopConfig()
    geometric: B.GeometricConfig = B.GeometricConfig()
    detector: tuple = (("aperture_threshold", 0.01), ("pixel_diff_threshold", 10), ("eps", 0.05))

    def __post_init__(self):
        if self.attempts_with < 1 or self.attempts_without < 1 or self.repetitions < 1:
            raise ValueError("attempt and repetition counts must be >= 1")
        if self.T < 1 or self.random_T < 1:
            raise ValueError("step budgets must be >= 1")


@dataclass
class PolicySpec:
    """A named, picklable policy; learned policies carry a network snapshot."""

    name: str
    net: object = None
    config: EvalConfig = EvalConfig()

    def __post_init__(self):
        if self.name not in POLICIES:
            raise ValueError(f"unknown policy {self.name!r}; choose from {', '.join(POLICIES)}")
        if self.name in LEARNED and self.net is None:
            raise ValueError(f"policy {self.name!r} needs a trained model")

    def run(self, world, rng, index=0, replace_object=True):
        cfg, det = self.config, dict(self.config.detector)
        calib = B.Calibration.from_variation(world.variation)
        if self.name == "random":
            return B.random_policy(world, rng, cfg.random_T, 0, index, replace_object, det,
                                   cfg.servo.raise_band[1])
        if self.name == "geometric":
            return B.geometric_policy(world, calib, rng, cfg.geometric, 0, index, replace_object, det)
        g = N.Predictor(self.net)
        if self.name == "open-loop":
            return B.open_loop_policy(world, g, calib, rng, cfg.open_loop, 0, index, replace_object, det)
        return servo.run_servo_episode(world, g, cfg.servo, cfg.T, rng, 0, index, replace_object, det)


@dataclass
class Attempt:
    policy: str
    protocol: str
    seed: int
    repetition: int
    attempt: int
    label: int
    grasped: bool
    steps: int
    images: int
    objects_left: int
    branches: dict

    def record(self):
        return asdict(self)


@dataclass
class ProtocolResult:
    policy: str
    protocol: str  # with_replacement | without_replacement
    seed: int
    attempts: list = field(default_factory=list)

    @property
    def failure_rate(self):
        if not self.attempts:
            return float("nan")
        return sum(1 - a.label for a in self.attempts) / len(self.attempts)

    def failure_at(self, k):
        """Pooled failure rate over the first k attempts of every repetition."""
        sel = [a for a in self.attempts if a.attempt < k]
        return sum(1 - a.label for a in sel) / len(sel) if sel else float("nan")

    def aggregates(self):
        out = {"attempts": len(self.attempts), "failure_rate": self.failure_rate}
        if self.protocol == "without_replacement":
            for k in CHECKPOINTS:
                out[f"failure_at_{k}"] = self.failure_at(k)
                out[f"n_at_{k}"] = sum(a.attempt < k for a in self.attempts)
        return out


def eval_variation(config, seed):
    """The evaluation robot: a fresh draw from the fleet distribution."""
    return sim.draw_variation(np.random.default_rng([seed, 7]), config.fleet)


def _attempt(policy, protocol, seed, rep, i, episode, world):
    return Attempt(policy.name, protocol, seed, rep, i, int(episode.label), bool(episode.grasped), episode.T,
                   episode.images_captured, len(world.objects), episode.branch_counts())


def _with_replacement(policy, seed):
    cfg = policy.config
    world = sim.spawn_scene(cfg.scene, seed, eval_variation(cfg, seed))
    out = []
    for i in range(cfg.attempts_with):
        rng = np.random.default_rng([seed, 0, i])
        episode, world = policy.run(world, rng, i, replace_object=True)
        out.append(_attempt(policy, "with_replacement", seed, 0, i, episode, world))
    return out


def _without_replacement_rep(policy, seed, rep):
    cfg = policy.config
    scene = sim.SceneConfig(**{**asdict(cfg.scene), "n_objects": cfg.n_objects_without})
    world = sim.spawn_scene(scene, seed * 1000 + rep + 1, eval_variation(cfg, seed))
    out = []
    for i in range(cfg.attempts_without):
        if not world.objects:
            break
        rng = np.random.default_rng([seed, rep + 1, i])
        episode, world = policy.run(world, rng, i, replace_object=False)
        out.append(_attempt(policy, "without_replacement", seed, rep, i, episode, world))
    return out


def _map(fn, args, workers):
    if workers > 1 and len(args) > 1:
        with ProcessPoolExecutor(workers) as pool:
            return list(pool.map(fn, *zip(*args)))
    return [fn(*a) for a in args]


def eval_with_replacement(policy, seed=0):
    """Grasped objects go back into the bin; reports the failure rate over all attempts."""
    return ProtocolResult(policy.name, "with_replacement", seed, _with_replacement(policy, seed))


def eval_without_replacement(policy, seed=0, workers=1):
    """Grasped objects leave the bin; repetitions stop early once the bin is empty."""
    reps = _map(_without_replacement_rep, [(policy, seed, r) for r in range(policy.config.repetitions)], workers)
    return ProtocolResult(policy.name, "without_replacement", seed, [a for rep in reps for a in rep])


def evaluate(policies, seed=0, protocols=("with_replacement", "without_replacement"), workers=1):
    """Run the chosen protocols for each policy on identical scene seeds."""
    results = []
    for p in policies:
        if "without_replacement" in protocols:
            results.append(eval_without_replacement(p, seed, workers))
        if "with_replacement" in protocols:
            results.append(eval_with_replacement(p, seed))
        for r in results[-len(protocols):]:
            log.info("%s %s: failure %.3f over %d attempts", r.policy, r.protocol, r.failure_rate, len(r.attempts))
    return results


# --- ablation -----------------------------------------------------------------------------------

@dataclass
class AblationRow:
    fraction: float
    episodes: int
    samples: int
    failure_at: dict  # checkpoint -> failure rate
    result: ProtocolResult = None


def train_on(dataset, arch=N.ArchConfig(), train_config=N.TrainConfig(), init=None):
    """A network trained on every sample of `dataset`, fresh or continued from `init`.

    `init` must have the architecture `arch` describes.
    """
    net = N.build_network(arch, train_config.seed)
    if init is not None:
        shapes = {k: v.shape for k, v in net.params.items()}
        if {k: v.shape for k, v in init.params.items()} != shapes:
            raise ValueError("initial model does not match the configured architecture")
        net = init
    return N.train(net, dataset.samples(), train_config)


def data_ablation(dataset, fractions=(0.12, 0.25, 0.50, 1.00), eval_config=EvalConfig(), arch=N.ArchConfig(),
                  train_config=N.TrainConfig(), seed=0, workers=1, trained=None):
    """Train one network per collection-order prefix and evaluate each without replacement.

    `trained` optionally maps a fraction to an already trained network for
    that exact slice and configuration, so a shared run is not repeated.
    """
    rows = []
    for f in fractions:
        part = D.dataset_slice(dataset, f)
        net = (trained or {}).get(f) or train_on(part, arch, train_config)
        res = eval_without_replacement(PolicySpec("servo", net, eval_config), seed, workers)
        rows.append(AblationRow(f, len(part), part.sample_count, {k: res.failure_at(k) for k in CHECKPOINTS}, res))
        log.info("fraction %.2f: %d episodes, %d samples, failure at 30 %.3f", f, len(part), part.sample_count,
                 rows[-1].failure_at[30])
    return rows


# --- reports ------------------------------------------------------------------------------------

def _pct(x):
    return "   n/a" if x != x else f"{100 * x:5.1f}%"


def results_table(results):
    """Failure rates in the layout: rows random, hand-designed, open loop, servo."""
    by = {(r.policy, r.protocol): r for r in results}
    names = [(k, label) for k, label in TABLE_ORDER if any(p == k for p, _ in by)]
    lines = ["failure rates", ""]
    head = f"{'method':<20}" + "".join(f"{'first ' + str(k):>10}" for k in CHECKPOINTS) + f"{'with repl.':>12}"
    lines.append(head)
    counts = {}
    for k, _ in names:
        w = by.get((k, "without_replacement"))
        if w is not None:
            counts = {c: sum(a.attempt < c for a in w.attempts) for c in CHECKPOINTS}
            break
    lines.append(f"{'':<20}" + "".join(f"{'N=' + str(counts.get(c, 0)):>10}" for c in CHECKPOINTS) + f"{'':>12}")
    for key, label in names:
        w, r = by.get((key, "without_replacement")), by.get((key, "with_replacement"))
        row = f"{label:<20}"
        row += "".join(f"{_pct(w.failure_at(c)) if w else '   n/a':>10}" for c in CHECKPOINTS)
        row += f"{_pct(r.failure_rate) if r else '   n/a':>12}"
        lines.append(row)
    return "\n".join(lines) + "\n"


def ablation_table(rows):
    lines = ["servo failure rates by dataset size", "",
             f"{'fraction':>9}{'episodes':>10}{'samples':>10}" + "".join(f"{'first ' + str(k):>10}" for k in CHECKPOINTS)]
    for r in rows:
        lines.append(f"{r.fraction:>9.2f}{r.episodes:>10d}{r.samples:>10d}"
                     + "".join(f"{_pct(r.failure_at[k]):>10}" for k in CHECKPOINTS))
    return "\n".join(lines) + "\n"


def _csv(rows, header):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _sorted(results):
    return sorted(results, key=lambda r: (r.policy, r.protocol, r.seed))


def emit_report(results, out_dir, ablation=None):
    """Write results.jsonl, table.txt and plot-ready CSV series; returns the written paths."""
    os.makedirs(out_dir, exist_ok=True)
    results = _sorted(results)
    records = []
    for r in results:
        for a in sorted(r.attempts, key=lambda a: (a.repetition, a.attempt)):
            records.append(json.dumps(a.record(), sort_keys=True))
    files = {"results.jsonl": "".join(line + "\n" for line in records), "table.txt": results_table(results)}
    series = []
    for r in results:
        for k in range(1, max((a.attempt + 1 for a in r.attempts), default=0) + 1):
            series.append((r.policy, r.protocol, k, f"{r.failure_at(k):.6f}"))
    files["failure_vs_attempts.csv"] = _csv(series, ("policy", "protocol", "attempts", "failure_rate"))
    if ablation is not None:
        files["ablation.txt"] = ablation_table(ablation)
        files["failure_vs_fraction.csv"] = _csv(
            [(f"{r.fraction:.2f}", r.episodes, r.samples) + tuple(f"{r.failure_at[k]:.6f}" for k in CHECKPOINTS)
             for r in ablation],
            ("fraction", "episodes", "samples") + tuple(f"failure_at_{k}" for k in CHECKPOINTS))
    paths = []
    for name, text in files.items():
        path = os.path.join(out_dir, name)
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
        paths.append(path)
    return paths


def load_results(path):
    """Rebuild ProtocolResults from a results.jsonl file."""
    groups = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                a = Attempt(**json.loads(line))
                groups.setdefault((a.policy, a.protocol, a.seed), []).append(a)
    return [ProtocolResult(p, proto, s, atts) for (p, proto, s), atts in sorted(groups.items())]
