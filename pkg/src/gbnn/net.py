"""Hand-written numpy backbones: dense/ReLU MLP and a LeNet-style conv net.

Every layer is a pair of functions, ``forward(params, x) -> (y, cache)`` and
``backward(params, cache, dy) -> (dx, grads)``. A Network is a list of layer
specs for the feature extractor followed by one dense classifier layer.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from gbnn.core import SeededRng

LAYER_KINDS = ("dense", "relu", "conv5x5", "maxpool2x2", "flatten")
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    # dense: input/output widths; conv5x5: input/output channels
    n_in: int = 0
    n_out: int = 0

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")

    @property
    def has_params(self) -> bool:
        return self.kind in ("dense", "conv5x5")


# --- layers -------------------------------------------------------------


def dense_forward(p, x):
    return x @ p["W"] + p["b"], x


def dense_backward(p, x, dy):
    return dy @ p["W"].T, {"W": x.T @ dy, "b": dy.sum(axis=0)}


def relu_forward(p, x):
    mask = x > 0
    return np.where(mask, x, 0.0), mask


def relu_backward(p, mask, dy):
    return np.where(mask, dy, 0.0), {}


def conv_forward(p, x):
    """Valid 5x5 convolution, stride 1. x: (N, C, H, W), W: (F, C, 5, 5)."""
    windows = sliding_window_view(x, (5, 5), axis=(2, 3))
    y = np.einsum("nchwij,fcij->nfhw", windows, p["W"], optimize=True)
    return y + p["b"][None, :, None, None], x


def conv_backward(p, x, dy):
    windows = sliding_window_view(x, (5, 5), axis=(2, 3))
    dW = np.einsum("nchwij,nfhw->fcij", windows, dy, optimize=True)
    db = dy.sum(axis=(0, 2, 3))
    dx = np.zeros_like(x)
    ho, wo = dy.shape[2], dy.shape[3]
    for i in range(5):
        for j in range(5):
            dx[:, :, i : i + ho, j : j + wo] += np.einsum("nfhw,fc->nchw", dy, p["W"][:, :, i, j], optimize=True)
    return dx, {"W": dW, "b": db}


def maxpool_forward(p, x):
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError("maxpool2x2 needs even spatial size")
    blocks = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    arg = blocks.argmax(axis=-1)
    y = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]
    return y, (x.shape, arg)


def maxpool_backward(p, cache, dy):
    shape, arg = cache
    n, c, h, w = shape
    blocks = np.zeros((n, c, h // 2, w // 2, 4))
    np.put_along_axis(blocks, arg[..., None], dy[..., None], axis=-1)
    dx = blocks.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(shape)
    return dx, {}


def flatten_forward(p, x):
    return x.reshape(len(x), -1), x.shape


def flatten_backward(p, shape, dy):
    return dy.reshape(shape), {}


FORWARD = {
    "dense": dense_forward,
    "relu": relu_forward,
    "conv5x5": conv_forward,
    "maxpool2x2": maxpool_forward,
    "flatten": flatten_forward,
}
BACKWARD = {
    "dense": dense_backward,
    "relu": relu_backward,
    "conv5x5": conv_backward,
    "maxpool2x2": maxpool_backward,
    "flatten": flatten_backward,
}


# --- network ------------------------------------------------------------


def mlp_specs(in_dim: int = 2, hidden=(32, 32)) -> list[LayerSpec]:
    specs, width = [], in_dim
    for h in hidden:
        specs += [LayerSpec("dense", width, h), LayerSpec("relu")]
        width = h
    return specs


def lenet_specs(in_channels: int = 3) -> list[LayerSpec]:
    # 32x32 -> conv 28 -> pool 14 -> conv 10 -> pool 5
    return [
        LayerSpec("conv5x5", in_channels, 6),
        LayerSpec("relu"),
        LayerSpec("maxpool2x2"),
        LayerSpec("conv5x5", 6, 16),
        LayerSpec("relu"),
        LayerSpec("maxpool2x2"),
        LayerSpec("flatten"),
        LayerSpec("dense", 16 * 5 * 5, 120),
        LayerSpec("relu"),
        LayerSpec("dense", 120, 84),
        LayerSpec("relu"),
    ]


def feature_dim(specs: list[LayerSpec]) -> int:
    for spec in reversed(specs):
        if spec.kind == "dense":
            return spec.n_out
    raise ValueError("feature extractor must end in a dense layer (optionally followed by relu)")


def init_layer(spec: LayerSpec, rng: SeededRng) -> dict:
    """Fan-in scaled uniform weights (He bound), zero biases."""
    if spec.kind == "dense":
        bound = np.sqrt(6.0 / spec.n_in)
        return {"W": rng.uniform(-bound, bound, (spec.n_in, spec.n_out)), "b": np.zeros(spec.n_out)}
    if spec.kind == "conv5x5":
        bound = np.sqrt(6.0 / (spec.n_in * 25))
        return {"W": rng.uniform(-bound, bound, (spec.n_out, spec.n_in, 5, 5)), "b": np.zeros(spec.n_out)}
    return {}


@dataclass
class Network:
    feature_specs: list[LayerSpec]
    num_classes: int
    params: list[dict] = field(default_factory=list)
    init_record: dict = field(default_factory=dict)
    # bumped on every parameter update; caches remember the version they saw
    version: int = 0

    @property
    def specs(self) -> list[LayerSpec]:
        return self.feature_specs + [LayerSpec("dense", feature_dim(self.feature_specs), self.num_classes)]

    @classmethod
    def create(cls, feature_specs, num_classes: int, seed: int) -> "Network":
        net = cls(list(feature_specs), num_classes)
        rng = SeededRng(seed)
        net.params = [init_layer(s, rng) for s in net.specs]
        net.init_record = {"scheme": "he_uniform", "seed": seed}
        return net


@dataclass
class ForwardCache:
    version: int
    layers: list


def features_forward(net: Network, inputs):
    x = np.asarray(inputs, dtype=np.float64)
    first = net.feature_specs[0]
    if first.kind == "dense" and (x.ndim != 2 or x.shape[1] != first.n_in):
        raise ValueError(f"expected input width {first.n_in}, got shape {x.shape}")
    if first.kind == "conv5x5" and (x.ndim != 4 or x.shape[1] != first.n_in):
        raise ValueError(f"expected {first.n_in}-channel images, got shape {x.shape}")
    caches = []
    for spec, p in zip(net.feature_specs, net.params):
        x, cache = FORWARD[spec.kind](p, x)
        caches.append(cache)
    return x, ForwardCache(net.version, caches)


def classifier_forward(net: Network, features):
    f = np.asarray(features, dtype=np.float64)
    p = net.params[-1]
    if f.ndim != 2 or f.shape[1] != p["W"].shape[0]:
        raise ValueError(f"classifier expects width {p['W'].shape[0]}, got shape {f.shape}")
    logits, cache = dense_forward(p, f)
    return logits, ForwardCache(net.version, [cache])


def predict(net: Network, inputs, batch_size: int = 1000) -> np.ndarray:
    out = []
    for s in range(0, len(inputs), batch_size):
        feats, _ = features_forward(net, inputs[s : s + batch_size])
        out.append(classifier_forward(net, feats)[0])
    return np.concatenate(out) if out else np.zeros((0, net.num_classes))


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy and its gradient with respect to the logits."""
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    n, k = z.shape
    if len(y) != n:
        raise ValueError("labels and logits differ in length")
    if n and (y.min() < 0 or y.max() >= k):
        raise ValueError("label out of range")
    shifted = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_norm
    loss = -log_probs[np.arange(n), y].mean()
    grad = np.exp(log_probs)
    grad[np.arange(n), y] -= 1.0
    return float(loss), grad / n


def classifier_backward(net: Network, cache: ForwardCache, dlogits):
    _check_cache(net, cache)
    return dense_backward(net.params[-1], cache.layers[0], dlogits)


def features_backward(net: Network, cache: ForwardCache, dfeatures) -> list[dict]:
    _check_cache(net, cache)
    if len(cache.layers) != len(net.feature_specs):
        raise ValueError("cache does not match this network")
    grads = [None] * len(net.feature_specs)
    d = dfeatures
    for i in reversed(range(len(net.feature_specs))):
        d, grads[i] = BACKWARD[net.feature_specs[i].kind](net.params[i], cache.layers[i], d)
    return grads


def _check_cache(net: Network, cache: ForwardCache):
    if cache.version != net.version:
        raise ValueError("stale cache: parameters changed since the forward pass")


@dataclass
class OptimizerState:
    learning_rate: float = 0.05
    momentum: float = 0.9
    velocity: list[dict] = field(default_factory=list)

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")


def sgd_step(net: Network, grads: list[dict], opt: OptimizerState) -> None:
    """v <- mu v - lr g ; theta <- theta + v."""
    if not opt.velocity:
        opt.velocity = [{k: np.zeros_like(v) for k, v in p.items()} for p in net.params]
    for p, g, v in zip(net.params, grads, opt.velocity):
        for name in p:
            v[name] = opt.momentum * v[name] - opt.learning_rate * g[name]
            p[name] = p[name] + v[name]
    net.version += 1


def backward_and_step(net: Network, feature_cache, classifier_cache, dlogits, opt: OptimizerState, to_features=None):
    """Backprop classifier -> (optional row mapping) -> feature extractor, then update.

    ``to_features`` maps the gradient on the classifier's input rows to the
    gradient on the extractor's output rows; the granular-ball layer plugs in
    here. Returns the gradients used for the step.
    """
    d_inputs, head = classifier_backward(net, classifier_cache, dlogits)
    d_features = to_features(d_inputs) if to_features is not None else d_inputs
    grads = features_backward(net, feature_cache, d_features) + [head]
    sgd_step(net, grads, opt)
    return grads


# --- checkpoints --------------------------------------------------------


def save_checkpoint(path, net: Network, opt: OptimizerState | None = None, rng: SeededRng | None = None, extra=None):
    meta = {
        "version": CHECKPOINT_VERSION,
        "feature_specs": [[s.kind, s.n_in, s.n_out] for s in net.feature_specs],
        "num_classes": net.num_classes,
        "init_record": net.init_record,
        "optimizer": None if opt is None else {"learning_rate": opt.learning_rate, "momentum": opt.momentum},
        "rng_state": None if rng is None else rng.state(),
        "extra": extra or {},
    }
    arrays = {"meta": np.array(json.dumps(meta, sort_keys=True))}
    for i, p in enumerate(net.params):
        for name, value in p.items():
            arrays[f"param/{i}/{name}"] = value
    if opt is not None:
        for i, v in enumerate(opt.velocity):
            for name, value in v.items():
                arrays[f"velocity/{i}/{name}"] = value
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path):
    """Returns (network, optimizer or None, rng or None, extra dict)."""
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["meta"]))
        if meta["version"] != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta['version']}")
        specs = [LayerSpec(*s) for s in meta["feature_specs"]]
        net = Network(specs, meta["num_classes"], init_record=meta["init_record"])
        net.params = [{} for _ in net.specs]
        velocity = [{} for _ in net.specs]
        has_velocity = False
        for key in z.files:
            if key == "meta":
                continue
            group, i, name = key.split("/")
            if group == "param":
                net.params[int(i)][name] = z[key].copy()
            else:
                velocity[int(i)][name] = z[key].copy()
                has_velocity = True
    opt = None
    if meta["optimizer"] is not None:
        opt = OptimizerState(**meta["optimizer"], velocity=velocity if has_velocity else [])
    rng = SeededRng.from_state(meta["rng_state"]) if meta["rng_state"] else None
    return net, opt, rng, meta["extra"]
