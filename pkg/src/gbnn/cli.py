"""Command-line entry point: train, cluster, inject-noise, eval."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys

import numpy as np

from gbnn.cluster import ClusterConfig, cluster
from gbnn.core import SeededRng
from gbnn.harness import TrainConfig, evaluate, load_datasets, run_experiment, write_metrics
from gbnn.layer import GBLayerConfig
from gbnn.net import load_checkpoint, save_checkpoint
from gbnn.noise import corrupt_labels
from gbnn.replay import ReplayConfig

# flag name -> (TrainConfig path, parser)
TRAIN_KEYS = {
    "dataset": ("dataset", str),
    "data-dir": ("data_dir", str),
    "subset-size": ("subset_size", int),
    "superclasses": ("class_filter", lambda s: tuple(int(v) for v in str(s).replace(",", " ").split())),
    "backbone": ("backbone", str),
    "gb": ("gb_enabled", lambda s: _parse_bool(s, ("on", "true", "1"), ("off", "false", "0"))),
    "purity": ("gb.cluster.purity_threshold", float),
    "max-split-depth": ("gb.cluster.max_split_depth", int),
    "recluster-rounds": ("gb.recluster_rounds", int),
    "grad-mode": ("gb.gradient_mode", str),
    "replay-min-size": ("replay.min_ball_size", int),
    "replay-capacity": ("replay.capacity", int),
    "replay-sample": ("replay.sample_count", int),
    "noise-ratio": ("noise_ratio", float),
    "stratified": ("stratified", lambda s: _parse_bool(s, ("true", "on", "1"), ("false", "off", "0"))),
    "epochs": ("epochs", int),
    "batch-size": ("batch_size", int),
    "lr": ("lr", float),
    "momentum": ("momentum", float),
    "seed": ("seed", int),
    "blob-classes": ("blob_classes", int),
    "blob-per-class": ("blob_per_class", int),
    "blob-test-per-class": ("blob_test_per_class", int),
    "blob-spread": ("blob_spread", float),
    "hidden": ("hidden", lambda s: tuple(int(v) for v in str(s).replace(",", " ").split())),
}


def _parse_bool(text, yes, no) -> bool:
    t = str(text).strip().lower()
    if t in yes:
        return True
    if t in no:
        return False
    raise ValueError(f"cannot read {text!r} as a boolean")


def read_config_file(path) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment. Keys use flag names."""
    values = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key = value")
            key, value = (part.strip() for part in line.split("=", 1))
            key = key.replace("_", "-")
            if key not in TRAIN_KEYS:
                raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
            values[key] = value
    return values


def build_train_config(args) -> TrainConfig:
    raw = read_config_file(args.config) if getattr(args, "config", None) else {}
    for key in TRAIN_KEYS:
        value = getattr(args, key.replace("-", "_"), None)
        if value is not None:
            raw[key] = value
    tree: dict = {"gb": {"cluster": {}}, "replay": {}}
    for key, text in raw.items():
        path, parse = TRAIN_KEYS[key]
        node = tree
        *parents, leaf = path.split(".")
        for p in parents:
            node = node[p]
        node[leaf] = parse(text)
    if tree.get("backbone") is None and tree.get("dataset") in ("cifar10", "cifar100"):
        tree["backbone"] = "lenet"
    gb = tree.pop("gb")
    gb["cluster"] = ClusterConfig(**gb["cluster"])
    tree["gb"] = GBLayerConfig(**gb)
    tree["replay"] = ReplayConfig(**tree["replay"])
    return TrainConfig(**tree)


def add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value file; command-line flags win")
    for key in TRAIN_KEYS:
        p.add_argument(f"--{key}", default=None)


def cmd_train(args) -> int:
    config = build_train_config(args)
    result = run_experiment(config)
    if args.out:
        write_metrics(args.out, result.records)
    if args.checkpoint:
        save_checkpoint(args.checkpoint, result.network, result.optimizer, result.rng, extra={"config": config.to_dict()})
    print(json.dumps(result.summary, sort_keys=True))
    return 0


def cmd_eval(args) -> int:
    net, _, _, extra = load_checkpoint(args.checkpoint)
    config = TrainConfig.from_dict(extra["config"])
    if args.data_dir:
        config = TrainConfig.from_dict({**config.to_dict(), "data_dir": args.data_dir})
    _, test = load_datasets(config, SeededRng(config.seed))
    loss, acc = evaluate(net, test)
    print(json.dumps({"test_loss": loss, "test_accuracy": acc, "test_size": len(test)}, sort_keys=True))
    return 0


def read_feature_csv(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if "label" not in header:
            raise ValueError("feature CSV needs a 'label' column")
        col = header.index("label")
        labels, feats = [], []
        for row in reader:
            if not row:
                continue
            labels.append(int(row[col]))
            feats.append([float(v) for i, v in enumerate(row) if i != col])
    return np.array(feats, dtype=np.float64), np.array(labels, dtype=np.int64)


def cmd_cluster(args) -> int:
    x, y = read_feature_csv(args.input)
    balls = cluster(x, y, ClusterConfig(purity_threshold=args.purity, max_split_depth=args.max_split_depth))
    out = open(args.out, "w") if args.out else sys.stdout
    try:
        out.write("members\tmajority_label\tpurity\tterminal\n")
        for b in balls:
            out.write(f"{' '.join(map(str, b.members))}\t{b.majority_label}\t{b.purity!r}\t{str(b.terminal).lower()}\n")
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def cmd_inject_noise(args) -> int:
    if args.labels:
        with open(args.labels) as fh:
            labels = np.array([int(line) for line in fh if line.strip()], dtype=np.int64)
        if args.num_classes is None:
            raise SystemExit("--num-classes is required with --labels")
        mask = corrupt_labels(labels, args.num_classes, float(args.noise_ratio or 0), SeededRng(int(args.seed or 0)),
                              stratified=_parse_bool(args.stratified or "true", ("true", "on", "1"), ("false", "off", "0")))
    else:
        # same streams as training, so the mask matches what `train` would use
        config = build_train_config(args)
        rng = SeededRng(config.seed)
        train, _ = load_datasets(config, rng)
        mask = corrupt_labels(train.labels, train.num_classes, config.noise_ratio, rng.child(3), config.stratified)
    mask.to_csv(args.out)
    print(json.dumps({"samples": len(mask), "corrupted": int(mask.corrupted.sum())}))
    return 0


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gbnn", description="Granular-ball label-noise filtering for neural nets")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run one experiment and write metrics CSV")
    add_train_flags(p)
    p.add_argument("--out", help="metrics CSV path")
    p.add_argument("--checkpoint", help="save the trained model here")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="report test accuracy of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data-dir")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("cluster", help="cluster a feature CSV and dump the balls")
    p.add_argument("input", help="CSV with a 'label' column; other columns are features")
    p.add_argument("--purity", type=float, default=0.8)
    p.add_argument("--max-split-depth", type=int, default=32)
    p.add_argument("--out")
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("inject-noise", help="write a NoiseMask CSV")
    add_train_flags(p)
    p.add_argument("--labels", help="file with one label per line (instead of a dataset)")
    p.add_argument("--num-classes", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_inject_noise)
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
