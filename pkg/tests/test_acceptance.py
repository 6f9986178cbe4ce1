"""Acceptance gate: one test per exit criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v``; the summary lines are also
repeated at the end of the pytest report.
"""

import os
import subprocess
import sys
import time

import numpy as np
import pytest

from acceptance_report import report
from gbnn.cluster import ClusterConfig, cluster
from gbnn.core import MembershipMap, SeededRng, mean_of
from gbnn.data import CifarFormatError, make_blobs, read_cifar10_file, read_cifar100_file
from gbnn.harness import TrainConfig, run_experiment
from gbnn.layer import GBLayerConfig
from gbnn.layer import backward as gb_backward
from gbnn.layer import forward as gb_forward
from gbnn.net import BACKWARD, FORWARD, Network, classifier_backward, classifier_forward, features_backward, features_forward, mlp_specs, softmax_cross_entropy
from gbnn.noise import corrupt_labels, effective_noise_rate
from oracles import brute_force_two_partition, central_difference, rel_error, sse

CIFAR10_DIR = os.environ.get("GBNN_CIFAR10_DIR", "data/cifar-10-batches-bin")


def random_dataset(rng):
    n = int(rng.integers(2, 513))
    d = int(rng.integers(1, 17))
    k = int(rng.integers(2, 11))
    if rng.random() < 0.5:
        centers = rng.normal(0, 3, (k, d))
        labels = rng.integers(0, k, n)
        x = centers[labels] + rng.normal(0, 1, (n, d))
        flip = rng.random(n) < rng.uniform(0, 0.5)
        labels[flip] = rng.integers(0, k, int(flip.sum()))
    else:
        x = rng.uniform(-1, 1, (n, d))
        labels = rng.integers(0, k, n)
    if rng.random() < 0.1:
        # duplicated rows exercise the identical-points terminal path
        x[: n // 2] = x[0]
    return x, labels


def test_criterion_01_purity_partition():
    rng = np.random.default_rng(20240601)
    start = time.perf_counter()
    failures = []
    cases = 1000
    for case in range(cases):
        x, y = random_dataset(rng)
        t = (0.6, 0.8, 1.0)[case % 3]
        balls = cluster(x, y, ClusterConfig(purity_threshold=t))
        members = sorted(m for b in balls for m in b.members)
        if members != list(range(len(x))):
            failures.append((case, "partition"))
        for b in balls:
            if b.size >= 2 and not b.terminal and b.purity < t:
                failures.append((case, "purity"))
            if np.max(np.abs(b.centroid - mean_of(list(x[list(b.members)])))) > 1e-9:
                failures.append((case, "centroid"))
    elapsed = time.perf_counter() - start
    ok = not failures and elapsed < 30
    report(1, "purity/partition suite", ok, f"{cases} cases, {len(failures)} violations", elapsed)
    assert not failures, failures[:5]
    assert elapsed < 30


def test_criterion_02_small_split_oracle():
    rng = np.random.default_rng(77)
    start = time.perf_counter()
    checked = mismatches = 0
    cases = 300
    for _ in range(cases):
        n = int(rng.integers(2, 9))
        x = rng.normal(size=(n, int(rng.integers(1, 5))))
        y = rng.integers(0, int(rng.integers(2, 4)), n)
        trace = []
        cluster(x, y, ClusterConfig(purity_threshold=1.0), trace=trace)
        for parent, a, b in trace:
            pts = x[list(parent)].tolist()
            best = brute_force_two_partition(pts)[0]
            got = sse(x[list(a)].tolist()) + sse(x[list(b)].tolist())
            checked += 1
            if got > best * (1 + 1e-9) + 1e-12:
                mismatches += 1
    elapsed = time.perf_counter() - start
    ok = mismatches == 0 and checked > 0 and elapsed < 10
    report(2, "clustering oracle (n <= 8)", ok, f"{cases} datasets, {checked} splits, {mismatches} suboptimal", elapsed)
    assert mismatches == 0 and checked > 0
    assert elapsed < 10


def random_membership(rng, n):
    order = list(rng.permutation(n))
    retained, discarded = [], set()
    while order:
        take = int(rng.integers(1, 7))
        chunk, order = order[:take], order[take:]
        if len(chunk) == 1:
            discarded.add(int(chunk[0]))
        else:
            retained.append(tuple(sorted(int(c) for c in chunk)))
    return MembershipMap(tuple(retained), frozenset(discarded), n)


def _pipeline_loss(net, x, membership, labels):
    feats, _ = features_forward(net, x)
    rows = np.stack([feats[list(m)].mean(axis=0) for m in membership.retained])
    return softmax_cross_entropy(classifier_forward(net, rows)[0], labels)[0]


def test_criterion_03_backward_contracts():
    rng = np.random.default_rng(3)
    start = time.perf_counter()
    copy_bad = mean_bad = 0
    maps = 500
    for _ in range(maps):
        n = int(rng.integers(1, 80))
        m = random_membership(rng, n)
        g = rng.normal(size=(m.output_size, int(rng.integers(1, 9))))
        out = gb_backward(g, m, GBLayerConfig(gradient_mode="copy"))
        for row, members in enumerate(m.retained):
            if any(out[j].tobytes() != g[row].tobytes() for j in members):
                copy_bad += 1
        if np.any(out[list(m.discarded)] != 0):
            copy_bad += 1
        out = gb_backward(g, m, GBLayerConfig(gradient_mode="mean"))
        for row, members in enumerate(m.retained):
            if np.max(np.abs(out[list(members)].sum(axis=0) - g[row])) > 1e-12:
                mean_bad += 1

    # end-to-end finite differences with the membership pinned
    net = Network.create(mlp_specs(2, (8, 8)), 3, seed=11)
    n_params = sum(v.size for p in net.params for v in p.values())
    x = rng.normal(size=(40, 2))
    y = rng.integers(0, 3, 40)
    config = GBLayerConfig(gradient_mode="mean")
    fwd = gb_forward(features_forward(net, x)[0], y, config)
    membership, labels = fwd.membership, fwd.centroid_labels
    feats, fcache = features_forward(net, x)
    logits, ccache = classifier_forward(net, fwd.centroid_features)
    _, d = softmax_cross_entropy(logits, labels)
    d_rows, head = classifier_backward(net, ccache, d)
    grads = features_backward(net, fcache, gb_backward(d_rows, membership, config)) + [head]
    worst = 0.0
    for i, p in enumerate(net.params):
        for name, value in p.items():
            numeric = central_difference(lambda: _pipeline_loss(net, x, membership, labels), value)
            worst = max(worst, rel_error(grads[i][name], numeric))
    elapsed = time.perf_counter() - start
    ok = copy_bad == 0 and mean_bad == 0 and worst <= 1e-4 and n_params <= 200 and elapsed < 60
    report(
        3,
        "backward contracts",
        ok,
        f"{maps} maps, copy violations {copy_bad}, conservation violations {mean_bad}, "
        f"e2e FD rel err {worst:.2e} ({n_params} params)",
        elapsed,
    )
    assert copy_bad == 0 and mean_bad == 0
    assert n_params <= 200 and worst <= 1e-4
    assert elapsed < 60


def _layer_error(kind, params, x, seed):
    y, cache = FORWARD[kind](params, x)
    w = np.random.default_rng(seed).normal(size=y.shape)
    dx, grads = BACKWARD[kind](params, cache, w)

    def f():
        return float(np.sum(FORWARD[kind](params, x)[0] * w))

    errs = [rel_error(dx, central_difference(f, x))]
    errs += [rel_error(grads[k], central_difference(f, v)) for k, v in params.items()]
    return max(errs)


def test_criterion_04_layer_gradients():
    rng = np.random.default_rng(4)
    start = time.perf_counter()
    relu_x = rng.normal(size=(5, 6))
    relu_x[np.abs(relu_x) < 1e-3] = 0.3
    errors = {
        "dense": _layer_error("dense", {"W": rng.normal(size=(5, 4)), "b": rng.normal(size=4)}, rng.normal(size=(3, 5)), 1),
        "relu": _layer_error("relu", {}, relu_x, 2),
        "conv5x5": _layer_error(
            "conv5x5", {"W": rng.normal(size=(2, 2, 5, 5)), "b": rng.normal(size=2)}, rng.normal(size=(2, 2, 7, 7)), 3
        ),
        "maxpool2x2": _layer_error("maxpool2x2", {}, rng.normal(size=(2, 2, 4, 4)), 4),
    }
    z = rng.normal(size=(5, 4)) * 2
    labels = rng.integers(0, 4, 5)
    _, g = softmax_cross_entropy(z, labels)
    errors["softmax_ce"] = rel_error(g, central_difference(lambda: softmax_cross_entropy(z, labels)[0], z))
    elapsed = time.perf_counter() - start
    worst = max(errors.values())
    ok = worst <= 1e-5 and elapsed < 60
    report(4, "layer gradient checks", ok, ", ".join(f"{k} {v:.1e}" for k, v in errors.items()), elapsed)
    assert worst <= 1e-5, errors
    assert elapsed < 60


def _blob_filter_runs(seeds=range(5)):
    """GB forward on 4x500 blobs with 30% stratified noise, one batch per seed."""
    config = GBLayerConfig(ClusterConfig(purity_threshold=0.8), recluster_rounds=2)
    rates, singleton_noise = [], []
    for seed in seeds:
        rng = SeededRng(seed)
        data = make_blobs(4, 500, 0.1, rng.child(1))
        mask = corrupt_labels(data.labels, 4, 0.3, rng.child(2), stratified=True)
        out = gb_forward(data.inputs, mask.noisy_label, config)
        targets = [(lab, mask.clean_label[list(m)]) for lab, m in zip(out.centroid_labels, out.membership.retained)]
        rates.append(effective_noise_rate(targets))
        singleton_noise.append(float(mask.corrupted[list(out.diagnostics.initial_singletons)].mean()))
    return rates, singleton_noise


def test_criterion_05_noise_filtering():
    start = time.perf_counter()
    rates, _ = _blob_filter_runs()
    elapsed = time.perf_counter() - start
    mean = float(np.mean(rates))
    ok = mean <= 0.15 and elapsed < 60
    report(5, "noise-filtering effectiveness", ok, f"mean effective noise {mean:.4f} <= 0.15 (per seed {np.round(rates, 3).tolist()})", elapsed)
    assert mean <= 0.15
    assert elapsed < 60


def test_criterion_06_singleton_concentration():
    start = time.perf_counter()
    _, noise = _blob_filter_runs()
    elapsed = time.perf_counter() - start
    mean = float(np.mean(noise))
    ok = mean > 0.30 and elapsed < 60
    report(6, "singleton noise concentration", ok, f"mean corrupted share of round-0 singletons {mean:.4f} > 0.30", elapsed)
    assert mean > 0.30
    assert elapsed < 60


def test_criterion_07_accuracy_ordering():
    start = time.perf_counter()
    gaps = {}
    detail = []
    for ratio in (0.3, 0.4):
        acc = {}
        for gb in (True, False):
            acc[gb] = [
                run_experiment(TrainConfig(gb_enabled=gb, noise_ratio=ratio, seed=s, epochs=20)).summary["max_test_accuracy"]
                for s in range(3)
            ]
        gaps[ratio] = float(np.mean(acc[True]) - np.mean(acc[False]))
        detail.append(f"noise {ratio}: gb {np.mean(acc[True]):.4f} vs base {np.mean(acc[False]):.4f} (gap {gaps[ratio]:+.4f})")
    elapsed = time.perf_counter() - start
    ok = all(g >= 0.02 for g in gaps.values()) and elapsed < 300
    report(7, "accuracy ordering (gap >= 0.02)", ok, "; ".join(detail), elapsed)
    assert all(g >= 0.02 for g in gaps.values()), gaps
    assert elapsed < 300


@pytest.mark.skipif(not os.path.exists(os.path.join(CIFAR10_DIR, "test_batch.bin")), reason="CIFAR-10 binaries not present")
def test_criterion_08_cifar_smoke():
    start = time.perf_counter()
    means = {}
    for gb in (True, False):
        means[gb] = np.mean(
            [
                run_experiment(
                    TrainConfig(
                        dataset="cifar10",
                        backbone="lenet",
                        data_dir=CIFAR10_DIR,
                        subset_size=5000,
                        gb_enabled=gb,
                        noise_ratio=0.3,
                        epochs=15,
                        seed=s,
                    )
                ).summary["max_test_accuracy"]
                for s in range(2)
            ]
        )
    elapsed = time.perf_counter() - start
    ok = means[True] >= means[False] and elapsed < 1800
    report(8, "CIFAR-10 LeNet smoke", ok, f"gb {means[True]:.4f} vs base {means[False]:.4f}", elapsed)
    assert means[True] >= means[False]


def test_criterion_09_determinism(tmp_path):
    start = time.perf_counter()
    outputs = []
    for run in range(2):
        out = tmp_path / f"metrics{run}.csv"
        subprocess.run(
            [sys.executable, "-m", "gbnn", "train", "--dataset", "blobs", "--blob-per-class", "100",
             "--noise-ratio", "0.3", "--epochs", "3", "--seed", "5", "--out", str(out)],
            check=True,
            capture_output=True,
        )
        outputs.append(out.read_bytes())
    elapsed = time.perf_counter() - start
    ok = outputs[0] == outputs[1] and len(outputs[0]) > 0
    report(9, "determinism", ok, f"two CLI runs, {len(outputs[0])} bytes each, identical={outputs[0] == outputs[1]}", elapsed)
    assert outputs[0] == outputs[1]


def test_criterion_10_format_fidelity(tmp_path):
    checks = []
    px = np.arange(3072, dtype=np.uint32).astype(np.uint8)
    px2 = (255 - px).astype(np.uint8)
    f10 = tmp_path / "c10.bin"
    f10.write_bytes(bytes([7]) + px.tobytes() + bytes([0]) + px2.tobytes())
    images, labels = read_cifar10_file(f10)
    checks.append(labels.tolist() == [7, 0])
    checks.append(np.array_equal(images[0].reshape(-1), px / 255.0))
    checks.append(np.array_equal(images[1].reshape(-1), px2 / 255.0))
    checks.append(images[0, 1, 0, 0] == px[1024] / 255.0 and images[0, 2, 0, 5] == px[2048 + 5] / 255.0)

    f100 = tmp_path / "c100.bin"
    f100.write_bytes(bytes([18, 58]) + px.tobytes() + bytes([19, 85]) + px2.tobytes())
    images, coarse, fine = read_cifar100_file(f100)
    checks.append(coarse.tolist() == [18, 19] and fine.tolist() == [58, 85])
    checks.append(np.array_equal(images[1].reshape(-1), px2 / 255.0))

    for path, size, reader in ((tmp_path / "t10.bin", 3072, read_cifar10_file), (tmp_path / "t100.bin", 3073, read_cifar100_file)):
        path.write_bytes(b"\x01" * size)
        try:
            reader(path)
            checks.append(False)
        except CifarFormatError as err:
            checks.append(err.offset == 0 and err.path == str(path))
    ok = all(checks)
    report(10, "format fidelity", ok, f"{sum(checks)}/{len(checks)} checks")
    assert ok, checks
