"""``coco`` command-line interface.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from . import selfcheck
from . import toy
from .errors import CocoError, ConfigError, ParseError, SplitError, TrainDiverged
from .graph import DomainPair, parse_tudataset, split_by_edge_density, write_tudataset
from .kernels import wl_kernel
from .trainer import (ABLATIONS, TrainConfig, evaluate, load_checkpoint,
                      metrics_dict, save_checkpoint, train, write_history_csv)

log = logging.getLogger("cocograph")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2

# Run-config keys that are not TrainConfig fields.
RUN_KEYS = {
    "source_dir": None, "source_prefix": None,
    "target_dir": None, "target_prefix": None,
    "out_dir": "run", "num_classes": None, "workers": 1, "log_every": 0,
}
TRAIN_KEYS = {f.name for f in fields(TrainConfig)}

CHECKPOINT_FILE = "checkpoint.json"
HISTORY_FILE = "history.csv"
METRICS_FILE = "metrics.json"
RESOLVED_FILE = "resolved_config.json"
MANIFEST_FILE = "manifest.json"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _dump(path, doc):
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


# ------------------------------------------------------------------ config

def resolve_run_config(file_doc: dict | None, overrides: dict, env=None) -> dict:
    """Defaults < config file < command-line flags; ``COCO_SEED`` wins for the seed."""
    env = os.environ if env is None else env
    doc = dict(file_doc or {})
    unknown = sorted(set(doc) - TRAIN_KEYS - set(RUN_KEYS))
    if unknown:
        raise ConfigError(f"unknown config key {unknown[0]!r}")
    resolved = dict(RUN_KEYS)
    resolved.update(TrainConfig().to_dict())
    resolved.update(doc)
    resolved.update({k: v for k, v in overrides.items() if v is not None})
    if env.get("COCO_SEED") not in (None, ""):
        try:
            resolved["seed"] = int(env["COCO_SEED"])
        except ValueError:
            raise ConfigError(f"COCO_SEED must be an integer, got {env['COCO_SEED']!r}") from None
    for key in ("source_dir", "source_prefix", "target_dir", "target_prefix"):
        if not resolved.get(key):
            raise ConfigError(f"missing required config key {key!r}")
    if not isinstance(resolved["workers"], int) or resolved["workers"] < 1:
        raise ConfigError("workers must be a positive integer")
    return resolved


def train_config_of(resolved: dict) -> TrainConfig:
    return TrainConfig.from_dict({k: v for k, v in resolved.items() if k in TRAIN_KEYS})


def load_config_file(path):
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError("config file must hold a JSON object")
    return doc


def load_domain_pair(resolved: dict) -> DomainPair:
    nc = resolved.get("num_classes")
    source = parse_tudataset(resolved["source_dir"], resolved["source_prefix"], nc)
    target = parse_tudataset(resolved["target_dir"], resolved["target_prefix"], nc)
    if source.num_classes != target.num_classes:
        raise ConfigError(f"source has {source.num_classes} classes, target {target.num_classes};"
                          " set num_classes explicitly")
    return DomainPair(source, target)


# ---------------------------------------------------------------- commands

def cmd_split(args) -> int:
    try:
        data = parse_tudataset(args.dataset, args.prefix)
    except FileNotFoundError as exc:
        raise ConfigError(str(exc)) from None
    parts = split_by_edge_density(data, args.parts, args.mode)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {"source": args.prefix, "num_classes": data.num_classes, "mode": args.mode, "parts": []}
    for k, part in enumerate(parts):
        name = f"{args.prefix}{k}"
        write_tudataset(part, out, name)
        dens = [g.density(args.mode) for g in part.graphs]
        manifest["parts"].append({
            "prefix": name, "size": len(part),
            "density_min": min(dens), "density_max": max(dens),
            "class_counts": np.bincount(part.labels, minlength=data.num_classes).tolist(),
        })
    _dump(out / MANIFEST_FILE, manifest)
    _dump(out / RESOLVED_FILE, {"command": "split", "dataset": str(args.dataset),
                                "prefix": args.prefix, "parts": args.parts,
                                "mode": args.mode, "out": str(args.out)})
    print(json.dumps(manifest, sort_keys=True))
    return EXIT_OK


def _train_overrides(args):
    over = {
        "source_dir": args.source_dir, "source_prefix": args.source_prefix,
        "target_dir": args.target_dir, "target_prefix": args.target_prefix,
        "out_dir": args.out, "workers": args.workers, "epochs": args.epochs,
        "seed": args.seed, "ablation": args.ablation, "batch_size": args.batch_size,
        "lr": args.lr, "num_classes": args.num_classes,
    }
    if args.paper_literal_accept:
        over["paper_literal_accept"] = True
    return over


def cmd_train(args) -> int:
    file_doc = load_config_file(args.config) if args.config else None
    resolved = resolve_run_config(file_doc, _train_overrides(args))
    config = train_config_of(resolved)
    try:
        data = load_domain_pair(resolved)
    except FileNotFoundError as exc:
        raise ConfigError(str(exc)) from None
    out = Path(resolved["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    _dump(out / RESOLVED_FILE, resolved)
    model, history = train(config, data, log_every=resolved["log_every"])
    acc = evaluate(model, data.labeled_target()) if data.target_labels is not None else None
    save_checkpoint(model, out / CHECKPOINT_FILE)
    write_history_csv(history, out / HISTORY_FILE)
    metrics = metrics_dict(model, history, resolved["target_prefix"], acc)
    _dump(out / METRICS_FILE, metrics)
    print(json.dumps(metrics, sort_keys=True))
    return EXIT_OK


def cmd_eval(args) -> int:
    if not Path(args.checkpoint).is_file():
        raise ConfigError(f"checkpoint {args.checkpoint} not found")
    model = load_checkpoint(args.checkpoint)
    try:
        data = parse_tudataset(args.dataset, args.prefix, model.num_classes)
    except FileNotFoundError as exc:
        raise ConfigError(str(exc)) from None
    acc = evaluate(model, data)
    doc = {"checkpoint": str(args.checkpoint), "dataset": args.prefix,
           "num_graphs": len(data), "accuracy": acc}
    print(json.dumps(doc, sort_keys=True))
    return EXIT_OK


def _gram_row(task):
    graphs, i, h, normalized = task
    return [wl_kernel(graphs[i], g, h=h, normalized=normalized) for g in graphs]


def gram_rows(graphs, h, normalized, workers=1):
    """Gram matrix computed row by row; with ``workers > 1`` rows are fanned out to
    processes and collected in row order, so the result does not depend on ``workers``."""
    tasks = [(graphs, i, h, normalized) for i in range(len(graphs))]
    if workers > 1 and len(graphs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_gram_row, tasks))
    else:
        rows = [_gram_row(t) for t in tasks]
    return np.array(rows, dtype=np.float64)


def cmd_kernel(args) -> int:
    if args.h < 0:
        raise ConfigError("h must be non-negative")
    try:
        data = parse_tudataset(args.dataset, args.prefix)
    except FileNotFoundError as exc:
        raise ConfigError(str(exc)) from None
    graphs = list(data.graphs)
    unlabeled = not data.has_node_labels
    if unlabeled:
        # no label file: every node starts with the same label, so WL sees structure only
        graphs = [replace(g, node_labels=(0,) * g.node_count) for g in graphs]
    K = gram_rows(graphs, args.h, args.normalized, args.workers)
    ids = [str(i + 1) for i in range(len(data))]
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(fh)
        w.writerow(["graph_id"] + ids)
        for gid, row in zip(ids, K):
            w.writerow([gid] + [repr(float(x)) if args.normalized else str(int(x)) for x in row])
    finally:
        if args.out:
            fh.close()
    if args.out:
        _dump(Path(str(args.out) + ".config.json"),
              {"command": "kernel", "dataset": str(args.dataset), "prefix": args.prefix,
               "h": args.h, "normalized": args.normalized, "out": str(args.out),
               "constant_node_labels": unlabeled})
    return EXIT_OK


def cmd_selfcheck(args) -> int:
    ok, report, worst = selfcheck.run_all(perturb=args.perturb_gradient)
    if args.json:
        print(json.dumps(selfcheck.report_dict(ok, report, worst), sort_keys=True))
        return EXIT_OK if ok else EXIT_RUNTIME
    print(selfcheck.format_report(report))
    print(f"worst gradient relative error: {worst:.3e}")
    print("selfcheck " + ("passed" if ok else "FAILED"))
    return EXIT_OK if ok else EXIT_RUNTIME


def cmd_gen_toy(args) -> int:
    out = Path(args.out)
    source, target = toy.write_toy(args.seed, out)
    _dump(out / RESOLVED_FILE, {"command": "gen-toy", "seed": args.seed, "out": str(args.out),
                                "source_prefix": toy.SOURCE_PREFIX,
                                "target_prefix": toy.TARGET_PREFIX})
    print(json.dumps({"source": len(source), "target": len(target), "out": str(out)}))
    return EXIT_OK


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="coco", description="Coupled contrastive domain adaptation for graph classification.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", parser_class=_Parser, required=True)

    s = sub.add_parser("split", help="split a dataset into parts of increasing edge density")
    s.add_argument("dataset", help="directory holding the TUDataset files")
    s.add_argument("prefix", help="dataset prefix, e.g. Mutagenicity")
    s.add_argument("--parts", type=int, default=4)
    s.add_argument("--mode", choices=("degree", "fraction"), default="degree")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_split)

    t = sub.add_parser("train", help="train on a source/target pair")
    t.add_argument("--config", help="JSON run config")
    t.add_argument("--source-dir")
    t.add_argument("--source-prefix")
    t.add_argument("--target-dir")
    t.add_argument("--target-prefix")
    t.add_argument("--out", help="output directory")
    t.add_argument("--epochs", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--num-classes", type=int)
    t.add_argument("--ablation", choices=ABLATIONS)
    t.add_argument("--paper-literal-accept", action="store_true",
                   help="accept filter edits whose estimated loss change is positive")
    t.add_argument("--workers", type=int)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="accuracy of a checkpoint on a labeled dataset")
    e.add_argument("checkpoint")
    e.add_argument("dataset")
    e.add_argument("prefix")
    e.set_defaults(func=cmd_eval)

    k = sub.add_parser("kernel", help="WL subtree Gram matrix as CSV")
    k.add_argument("dataset")
    k.add_argument("prefix")
    k.add_argument("--h", type=int, default=2)
    k.add_argument("--normalized", action="store_true")
    k.add_argument("--out")
    k.add_argument("--workers", type=int, default=1)
    k.set_defaults(func=cmd_kernel)

    c = sub.add_parser("selfcheck", help="gradient, kernel and EM identity checks")
    c.add_argument("--json", action="store_true", help="print the report as JSON")
    c.add_argument("--perturb-gradient", type=float, default=0.0, help=argparse.SUPPRESS)
    c.set_defaults(func=cmd_selfcheck)

    g = sub.add_parser("gen-toy", help="write the synthetic cycles-vs-stars domain pair")
    g.add_argument("--seed", type=int, default=7)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_toy)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"coco: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ParseError, SplitError) as exc:
        print(f"coco: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainDiverged as exc:
        print(f"coco: training diverged: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (CocoError, ValueError, OSError) as exc:
        print(f"coco: failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
