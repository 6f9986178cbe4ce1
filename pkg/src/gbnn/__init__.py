"""Granular-ball label-noise filtering for small numpy networks."""

from gbnn.cluster import ClusterConfig, cluster, split_ball
from gbnn.core import GranularBall, LabeledSample, MembershipMap, SeededRng
from gbnn.layer import GBLayerConfig, backward, forward
from gbnn.noise import NoiseMask, corrupt_labels
from gbnn.replay import ReplayBuffer, ReplayConfig

__version__ = "0.1.0"

__all__ = [
    "ClusterConfig",
    "GBLayerConfig",
    "GranularBall",
    "LabeledSample",
    "MembershipMap",
    "NoiseMask",
    "ReplayBuffer",
    "ReplayConfig",
    "SeededRng",
    "backward",
    "cluster",
    "corrupt_labels",
    "forward",
    "split_ball",
]
