"""Command line: collect, train, eval, ablate, report.

Exit codes: 0 success, 2 configuration or usage error, 3 I/O error,
4 runtime failure.
"""

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import asdict

from . import data as D
from . import evaluation as E
from . import net as N
from .config import ConfigError, PipelineConfig, load_config

log = logging.getLogger("handeye")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_RUNTIME = 0, 2, 3, 4
MANIFEST = "manifest.json"


class UsageError(ValueError):
    pass


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _config(args):
    cfg = load_config(args.config) if args.config else PipelineConfig()
    run = cfg.run
    if args.seed is not None:
        if args.seed < 0 or args.seed >= 2 ** 64:
            raise ConfigError(f"--seed: {args.seed} is not an unsigned 64-bit value")
        run = run.__class__(args.seed, run.out, run.workers)
    if args.out is not None:
        run = run.__class__(run.seed, args.out, run.workers)
    if args.workers is not None:
        if args.workers < 1:
            raise ConfigError("--workers: must be >= 1")
        run = run.__class__(run.seed, run.out, args.workers)
    return cfg.__class__(**{**{k: getattr(cfg, k) for k in cfg.__dataclass_fields__}, "run": run})


# --- dataset directories ------------------------------------------------------------------------

def save_dataset(dataset, directory, schedule):
    """One shard per collection phase plus a manifest with checksums."""
    os.makedirs(directory, exist_ok=True)
    shards, start = [], 0
    for p, phase in enumerate(schedule.phases):
        eps = dataset.episodes[start:start + phase.episodes]
        start += phase.episodes
        name = f"shard-{p:03d}.sgds"
        path = os.path.join(directory, name)
        D.write_shard(eps, path, metadata={"phase": p, **dataset.metadata})
        shards.append({"file": name, "phase": p, "episodes": len(eps), "samples": sum(e.T for e in eps),
                       "successes": sum(e.label for e in eps), "sha256": _sha256(path)})
    manifest = {"format": 1, "episodes": len(dataset), "samples": dataset.sample_count, "shards": shards,
                **dataset.metadata}
    _write_json(os.path.join(directory, MANIFEST), manifest)
    return manifest


def load_dataset(directory):
    path = os.path.join(directory, MANIFEST)
    if not os.path.isfile(path):
        raise FileNotFoundError(f"no dataset manifest at {path}")
    with open(path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    episodes = []
    for shard in manifest["shards"]:
        episodes.extend(D.read_shard(os.path.join(directory, shard["file"])))
    meta = {k: v for k, v in manifest.items() if k not in ("format", "episodes", "samples", "shards")}
    return D.Dataset(episodes, meta)


# --- subcommands --------------------------------------------------------------------------------

def cmd_collect(cfg, args):
    out = os.path.join(cfg.run.out, "dataset")
    dataset, net = D.run_collection(cfg.collection_config(), cfg.schedule, cfg.run.seed, cfg.run.workers)
    manifest = save_dataset(dataset, out, cfg.schedule)
    if net is not None:
        N.save(net, os.path.join(cfg.run.out, "collector.sgnt"))
    log.info("collected %d episodes (%d samples) into %s", manifest["episodes"], manifest["samples"], out)
    return manifest


def cmd_train(cfg, args):
    dataset = load_dataset(args.dataset)
    if len(dataset) == 0:
        raise UsageError(f"dataset {args.dataset} is empty")
    init = N.load(args.init) if args.init else None
    os.makedirs(cfg.run.out, exist_ok=True)
    try:
        net = E.train_on(dataset, cfg.network, cfg.train_config(), init)
    except ValueError as exc:
        if init is None:
            raise
        raise UsageError(f"--init {args.init}: {exc}") from exc
    path = os.path.join(cfg.run.out, "model.sgnt")
    N.save(net, path)
    _write_json(os.path.join(cfg.run.out, "train_log.json"),
                {"episodes": len(dataset), "samples": dataset.sample_count, "train": asdict(cfg.train_config()),
                 "init_sha256": _sha256(args.init) if args.init else None,
                 "epoch_loss": [float(x) for x in net.history], "model_sha256": _sha256(path)})
    log.info("model written to %s", path)
    return path


def _policies(cfg, args):
    names = tuple(s.strip() for s in args.policies.split(",")) if args.policies else cfg.eval.policies
    for n in names:
        if n not in E.POLICIES:
            raise UsageError(f"unknown policy {n!r}; choose from {', '.join(E.POLICIES)}")
    net = None
    if any(n in E.LEARNED for n in names):
        if not args.model:
            raise UsageError("policies " + ", ".join(n for n in names if n in E.LEARNED) + " need --model")
        net = N.load(args.model)
    ec = cfg.eval_config()
    return [E.PolicySpec(n, net if n in E.LEARNED else None, ec) for n in names]


def cmd_eval(cfg, args):
    policies = _policies(cfg, args)
    results = E.evaluate(policies, cfg.run.seed, cfg.eval.protocols, cfg.run.workers)
    paths = E.emit_report(results, os.path.join(cfg.run.out, "report"))
    print(open(paths[1], encoding="utf-8").read(), end="")
    return paths


def cmd_ablate(cfg, args):
    dataset = load_dataset(args.dataset)
    if len(dataset) == 0:
        raise UsageError(f"dataset {args.dataset} is empty")
    fractions = tuple(float(f) for f in args.fractions.split(",")) if args.fractions else cfg.ablation.fractions
    for f in fractions:
        if not 0.0 < f <= 1.0:
            raise UsageError(f"fraction {f} outside (0, 1]")
    rows = E.data_ablation(dataset, fractions, cfg.eval_config(), cfg.network, cfg.train_config(), cfg.run.seed,
                           cfg.run.workers)
    paths = E.emit_report([r.result for r in rows], os.path.join(cfg.run.out, "ablation"), ablation=rows)
    print(E.ablation_table(rows), end="")
    return paths


def cmd_report(cfg, args):
    results = E.load_results(args.results)
    paths = E.emit_report(results, args.out or os.path.join(cfg.run.out, "report"))
    print(open(paths[1], encoding="utf-8").read(), end="")
    return paths


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="pipeline config file (INI)")
    common.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--workers", type=int, help="worker processes")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress, including per-epoch loss")

    parser = argparse.ArgumentParser(prog="handeye", description="Grasp-learning pipeline on a simulated fleet.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("collect", parents=[common], help="collect self-supervised grasp episodes")
    p = sub.add_parser("train", parents=[common], help="train a success predictor on a dataset")
    p.add_argument("--dataset", required=True, help="dataset directory written by collect")
    p.add_argument("--init", help="continue training from this model (e.g. the collector snapshot)")
    p = sub.add_parser("eval", parents=[common], help="evaluate policies under both protocols")
    p.add_argument("--model", help="model file for the learned policies")
    p.add_argument("--policies", help="comma-separated subset of: " + ", ".join(E.POLICIES))
    p = sub.add_parser("ablate", parents=[common], help="train and evaluate on dataset prefixes")
    p.add_argument("--dataset", required=True, help="dataset directory written by collect")
    p.add_argument("--fractions", help="comma-separated fractions in (0, 1]")
    p = sub.add_parser("report", parents=[common], help="rebuild tables and series from a results file")
    p.add_argument("--results", required=True, help="results.jsonl written by eval or ablate")
    return parser


COMMANDS = {"collect": cmd_collect, "train": cmd_train, "eval": cmd_eval, "ablate": cmd_ablate,
            "report": cmd_report}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        cfg = _config(args)
        COMMANDS[args.command](cfg, args)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, N.ModelFormatError, D.ShardFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except Exception as exc:  # anything else is a pipeline failure
        log.exception("run failed")
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
