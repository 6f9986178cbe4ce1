"""Experiment configuration, training loop and metrics output."""

from __future__ import annotations

import csv
import dataclasses
import io
import logging
from dataclasses import dataclass, field

import numpy as np

from gbnn import layer as gb_layer
from gbnn.cluster import ClusterConfig
from gbnn.core import SeededRng
from gbnn.data import Dataset, load_cifar10, load_cifar100_subset, make_blobs, stratified_subset
from gbnn.layer import GBLayerConfig
from gbnn.net import (
    Network,
    OptimizerState,
    backward_and_step,
    classifier_forward,
    features_forward,
    lenet_specs,
    mlp_specs,
    predict,
    softmax_cross_entropy,
)
from gbnn.noise import NoiseMask, corrupt_labels, effective_noise_rate
from gbnn.replay import ReplayBuffer, ReplayConfig

log = logging.getLogger(__name__)

METRICS_HEADER = (
    "epoch",
    "split",
    "loss",
    "accuracy",
    "balls_total",
    "balls_discarded",
    "retained_fraction",
    "effective_noise_rate",
    "replay_rows",
)
DATASETS = ("blobs", "cifar10", "cifar100")
BACKBONES = ("mlp", "lenet")
DEFAULT_LR = {"mlp": 0.05, "lenet": 0.01}


@dataclass(frozen=True)
class TrainConfig:
    dataset: str = "blobs"
    backbone: str = "mlp"
    gb_enabled: bool = True
    noise_ratio: float = 0.0
    stratified: bool = True
    seed: int = 0
    epochs: int = 10
    batch_size: int = 128
    lr: float | None = None
    momentum: float = 0.9
    gb: GBLayerConfig = field(default_factory=GBLayerConfig)
    replay: ReplayConfig = field(default_factory=ReplayConfig)
    # CIFAR-100 superclass ids to keep
    class_filter: tuple[int, ...] | None = None
    data_dir: str | None = None
    subset_size: int | None = None
    blob_classes: int = 4
    blob_per_class: int = 500
    blob_test_per_class: int = 500
    blob_spread: float = 0.1
    hidden: tuple[int, ...] = (32, 32)

    def __post_init__(self):
        if self.dataset not in DATASETS:
            raise ValueError(f"dataset must be one of {DATASETS}")
        if self.backbone not in BACKBONES:
            raise ValueError(f"backbone must be one of {BACKBONES}")
        if self.dataset == "blobs" and self.backbone != "mlp":
            raise ValueError("blobs are 2-D points; use the mlp backbone")
        if not 0.0 <= self.noise_ratio < 1.0:
            raise ValueError("noise_ratio must be in [0, 1)")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if self.lr is not None and self.lr < 0:
            raise ValueError("lr must be non-negative")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        if self.dataset == "cifar100" and not self.class_filter:
            raise ValueError("no classes selected")
        if self.dataset != "blobs" and not self.data_dir:
            raise ValueError(f"{self.dataset} needs data_dir")

    @property
    def learning_rate(self) -> float:
        return DEFAULT_LR[self.backbone] if self.lr is None else self.lr

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        gb = dict(d.pop("gb", {}))
        gb["cluster"] = ClusterConfig(**gb.get("cluster", {}))
        d["gb"] = GBLayerConfig(**gb)
        d["replay"] = ReplayConfig(**d.pop("replay", {}))
        for key in ("class_filter", "hidden"):
            if d.get(key) is not None:
                d[key] = tuple(d[key])
        return cls(**d)


@dataclass(frozen=True)
class MetricsRecord:
    epoch: int
    split: str
    loss: float
    accuracy: float
    balls_total: int | None = None
    balls_discarded: int | None = None
    retained_fraction: float | None = None
    effective_noise_rate: float | None = None
    replay_rows: int | None = None

    def row(self) -> list[str]:
        return ["" if v is None else repr(v) if isinstance(v, float) else str(v) for v in dataclasses.astuple(self)]


@dataclass
class ExperimentResult:
    records: list[MetricsRecord]
    summary: dict
    network: Network
    optimizer: OptimizerState
    rng: SeededRng


def load_datasets(config: TrainConfig, rng: SeededRng) -> tuple[Dataset, Dataset]:
    if config.dataset == "blobs":
        train = make_blobs(config.blob_classes, config.blob_per_class, config.blob_spread, rng.child(1))
        test = make_blobs(config.blob_classes, config.blob_test_per_class, config.blob_spread, rng.child(2))
        return train, test
    if config.dataset == "cifar10":
        train = load_cifar10(config.data_dir, config.subset_size, rng.child(1), split="train")
        return train, load_cifar10(config.data_dir, split="test")
    train = load_cifar100_subset(config.data_dir, config.class_filter, split="train")
    if config.subset_size is not None and config.subset_size < len(train):
        train = train.subset(stratified_subset(train.labels, config.subset_size, train.num_classes, rng.child(1)))
    return train, load_cifar100_subset(config.data_dir, config.class_filter, split="test")


def build_network(config: TrainConfig, train: Dataset, seed: int) -> Network:
    if config.backbone == "mlp":
        specs = mlp_specs(train.inputs.shape[1], config.hidden)
    else:
        specs = lenet_specs(train.inputs.shape[1])
    return Network.create(specs, train.num_classes, seed)


def evaluate(net: Network, data: Dataset) -> tuple[float, float]:
    logits = predict(net, data.inputs)
    loss, _ = softmax_cross_entropy(logits, data.labels)
    return loss, float(np.mean(logits.argmax(axis=1) == data.labels))


def run_experiment(config: TrainConfig, train: Dataset | None = None, test: Dataset | None = None) -> ExperimentResult:
    """Train one model and evaluate it on clean test labels after every epoch.

    Noise touches training labels only. The granular-ball layer runs only
    in training; evaluation feeds per-sample features to the classifier.
    """
    rng = SeededRng(config.seed)
    if train is None or test is None:
        train, test = load_datasets(config, rng)
    mask = corrupt_labels(train.labels, train.num_classes, config.noise_ratio, rng.child(3), config.stratified)
    net = build_network(config, train, rng.child(4).seed)
    opt = OptimizerState(config.learning_rate, config.momentum)
    replay = ReplayBuffer(config.replay)
    replay_rng = rng.child(6)

    loss, acc = evaluate(net, test)
    records = [MetricsRecord(0, "test", loss, acc)]
    batch_id = 0
    skipped = 0
    for epoch in range(1, config.epochs + 1):
        order = rng.child(5, epoch).permutation(len(train))
        stats = _EpochStats()
        for start in range(0, len(order), config.batch_size):
            idx = order[start : start + config.batch_size]
            if config.gb_enabled:
                ok = _gb_step(net, opt, train.inputs[idx], idx, mask, config, replay, replay_rng, batch_id, stats)
                skipped += not ok
            else:
                _plain_step(net, opt, train.inputs[idx], mask.noisy_label[idx], stats)
            batch_id += 1
        records.append(stats.record(epoch, config.gb_enabled))
        loss, acc = evaluate(net, test)
        records.append(MetricsRecord(epoch, "test", loss, acc))
        log.info("epoch %d train_loss %.4f test_acc %.4f", epoch, records[-2].loss, acc)

    test_acc = [r.accuracy for r in records if r.split == "test"]
    trained = test_acc[1:] or test_acc
    summary = {
        "max_test_accuracy": max(trained),
        "final_test_accuracy": test_acc[-1],
        "initial_test_accuracy": test_acc[0],
        "skipped_steps": skipped,
        "train_size": len(train),
        "test_size": len(test),
        "corrupted": int(mask.corrupted.sum()),
    }
    return ExperimentResult(records, summary, net, opt, rng)


class _EpochStats:
    def __init__(self):
        self.loss_sum = 0.0
        self.steps = 0
        self.correct = 0
        self.rows = 0
        self.balls_total = 0
        self.balls_discarded = 0
        self.samples = 0
        self.kept = 0
        self.targets: list = []
        self.replay_rows = 0

    def record(self, epoch: int, gb: bool) -> MetricsRecord:
        loss = self.loss_sum / self.steps if self.steps else float("nan")
        acc = self.correct / self.rows if self.rows else 0.0
        if not gb:
            return MetricsRecord(epoch, "train", loss, acc)
        return MetricsRecord(
            epoch,
            "train",
            loss,
            acc,
            balls_total=self.balls_total,
            balls_discarded=self.balls_discarded,
            retained_fraction=self.kept / self.samples if self.samples else 0.0,
            effective_noise_rate=effective_noise_rate(self.targets) if self.targets else None,
            replay_rows=self.replay_rows,
        )


def _plain_step(net, opt, inputs, labels, stats: _EpochStats):
    feats, fcache = features_forward(net, inputs)
    logits, ccache = classifier_forward(net, feats)
    loss, dlogits = softmax_cross_entropy(logits, labels)
    backward_and_step(net, fcache, ccache, dlogits, opt)
    stats.loss_sum += loss
    stats.steps += 1
    stats.correct += int(np.sum(logits.argmax(axis=1) == labels))
    stats.rows += len(labels)


def _gb_step(net, opt, inputs, idx, mask: NoiseMask, config, replay, replay_rng, batch_id, stats: _EpochStats) -> bool:
    feats, fcache = features_forward(net, inputs)
    out = gb_layer.forward(feats, mask.noisy_label[idx], config.gb)
    diag = out.diagnostics
    stats.balls_total += diag.balls_total
    stats.balls_discarded += diag.balls_discarded
    stats.samples += len(idx)
    stats.kept += len(idx) - diag.balls_discarded
    if diag.all_discarded:
        return False
    for label, members in zip(out.centroid_labels, out.membership.retained):
        stats.targets.append((label, mask.clean_label[idx[list(members)]]))

    rows, labels, membership = out.centroid_features, out.centroid_labels, out.membership
    replayed = replay.sample(replay_rng)
    if replayed:
        # replayed centroids are constants: they train the classifier only
        rows = np.vstack([rows, np.stack([b.centroid for b in replayed])])
        labels = np.concatenate([labels, np.array([b.label for b in replayed], dtype=np.int64)])
        membership = membership.with_replay(len(replayed))
        stats.replay_rows += len(replayed)

    logits, ccache = classifier_forward(net, rows)
    loss, dlogits = softmax_cross_entropy(logits, labels)
    backward_and_step(
        net, fcache, ccache, dlogits, opt, to_features=lambda d: gb_layer.backward(d, membership, config.gb)
    )
    replay.store(list(out.balls), batch_id)
    stats.loss_sum += loss
    stats.steps += 1
    stats.correct += int(np.sum(logits.argmax(axis=1) == labels))
    stats.rows += len(labels)
    return True


def metrics_csv(records: list[MetricsRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(METRICS_HEADER)
    for r in records:
        writer.writerow(r.row())
    return buf.getvalue()


def write_metrics(path, records: list[MetricsRecord]) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(metrics_csv(records))
