"""Granular-ball layer sitting between the feature extractor and classifier.

Forward replaces a batch of feature rows by one centroid row per retained
ball. Singleton balls get ``recluster_rounds`` more chances: all current
singletons are pooled and clustered again, and whatever remains alone after
the last round is dropped. Backward maps centroid gradients back onto the
member rows recorded during forward.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from gbnn.cluster import ClusterConfig, cluster
from gbnn.core import GranularBall, MembershipMap

GRADIENT_MODES = ("copy", "mean")


@dataclass(frozen=True)
class GBLayerConfig:
    cluster: ClusterConfig = field(default_factory=ClusterConfig)
    recluster_rounds: int = 2
    gradient_mode: str = "copy"

    def __post_init__(self):
        if self.recluster_rounds < 0:
            raise ValueError("recluster_rounds must be >= 0")
        if self.gradient_mode not in GRADIENT_MODES:
            raise ValueError(f"gradient_mode must be one of {GRADIENT_MODES}")


@dataclass(frozen=True)
class GBDiagnostics:
    balls_total: int
    balls_discarded: int
    retained_fraction: float
    ball_sizes: tuple[int, ...]
    # singletons left by the first clustering pass, before any re-clustering
    initial_singletons: tuple[int, ...]
    all_discarded: bool


@dataclass(frozen=True)
class GBForwardOutput:
    centroid_features: np.ndarray
    centroid_labels: np.ndarray
    membership: MembershipMap
    balls: tuple[GranularBall, ...]
    diagnostics: GBDiagnostics


def forward(features, labels, config: GBLayerConfig | None = None) -> GBForwardOutput:
    config = config or GBLayerConfig()
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels)
    if x.ndim != 2 or len(x) == 0:
        raise ValueError("empty batch")
    if len(y) != len(x):
        raise ValueError("labels and features differ in length")

    retained: list[GranularBall] = []
    singletons: list[int] = []
    for ball in cluster(x, y, config.cluster):
        if ball.size == 1:
            singletons.append(ball.members[0])
        else:
            retained.append(ball)
    initial = tuple(singletons)

    for _ in range(config.recluster_rounds):
        if len(singletons) < 2:
            break
        pool = np.array(singletons)
        leftover = []
        for ball in cluster(x[pool], y[pool], config.cluster):
            members = tuple(int(pool[m]) for m in ball.members)
            if len(members) == 1:
                leftover.append(members[0])
            else:
                retained.append(
                    GranularBall(members, ball.centroid, ball.majority_label, ball.purity, ball.terminal)
                )
        if len(leftover) == len(singletons):
            break
        singletons = sorted(leftover)

    dim = x.shape[1]
    membership = MembershipMap(
        retained=tuple(b.members for b in retained),
        discarded=frozenset(singletons),
        input_size=len(x),
    )
    kept = len(x) - len(singletons)
    diagnostics = GBDiagnostics(
        balls_total=len(retained) + len(singletons),
        balls_discarded=len(singletons),
        retained_fraction=kept / len(x),
        ball_sizes=tuple(b.size for b in retained),
        initial_singletons=initial,
        all_discarded=not retained,
    )
    if retained:
        centroids = np.stack([b.centroid for b in retained])
    else:
        centroids = np.zeros((0, dim))
    return GBForwardOutput(
        centroid_features=centroids,
        centroid_labels=np.array([b.majority_label for b in retained], dtype=np.int64),
        membership=membership,
        balls=tuple(retained),
        diagnostics=diagnostics,
    )


def backward(centroid_grads, membership: MembershipMap, config: GBLayerConfig | None = None) -> np.ndarray:
    """Broadcast centroid gradients onto member rows.

    ``copy`` hands every member the centroid gradient unchanged. ``mean``
    divides by the ball size, which is the exact gradient of the averaging
    step for a fixed membership. Discarded and replay rows receive nothing.
    """
    config = config or GBLayerConfig()
    g = np.asarray(centroid_grads, dtype=np.float64)
    if g.ndim != 2 or g.shape[0] != membership.output_size:
        raise ValueError(
            f"centroid gradient has {g.shape[0] if g.ndim else 0} rows, "
            f"membership expects {membership.output_size}"
        )
    out = np.zeros((membership.input_size, g.shape[1]))
    for row, members in enumerate(membership.retained):
        if not members:
            continue
        if config.gradient_mode == "copy":
            out[list(members)] = g[row]
        else:
            out[list(members)] = g[row] / len(members)
    return out
