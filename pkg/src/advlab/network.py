"""A small convolutional classifier with hand-written reverse-mode gradients.

Everything works on batches in NHWC layout. The single-image functions
(`forward_probs`, `cost`, `input_gradient`) wrap the batched kernels.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor_core import DTYPE, check_finite

CHECKPOINT_VERSION = 1

LAYER_KINDS = ("conv2d", "relu", "maxpool2x2", "flatten", "dense")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    out_channels: int | None = None
    kernel_size: int | None = None
    stride: int | None = None
    out_features: int | None = None

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.kind == "conv2d":
            for name in ("out_channels", "kernel_size", "stride"):
                v = getattr(self, name)
                if v is None or int(v) < 1:
                    raise ValueError(f"conv2d needs a positive {name}")
        if self.kind == "dense" and (self.out_features is None or self.out_features < 1):
            raise ValueError("dense needs a positive out_features")

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.kind == "conv2d":
            d.update(out_channels=self.out_channels, kernel_size=self.kernel_size,
                     stride=self.stride)
        elif self.kind == "dense":
            d["out_features"] = self.out_features
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LayerSpec":
        return cls(**d)


def conv2d(out_channels: int, kernel_size: int, stride: int = 1) -> LayerSpec:
    return LayerSpec("conv2d", out_channels=out_channels, kernel_size=kernel_size,
                     stride=stride)


def relu() -> LayerSpec:
    return LayerSpec("relu")


def maxpool2x2() -> LayerSpec:
    return LayerSpec("maxpool2x2")


def flatten() -> LayerSpec:
    return LayerSpec("flatten")


def dense(out_features: int) -> LayerSpec:
    return LayerSpec("dense", out_features=out_features)


def desk_layers(class_count: int = 10) -> list[LayerSpec]:
    """The reference architecture used throughout the tests and demos."""
    return [conv2d(8, 3, 1), relu(), maxpool2x2(),
            conv2d(16, 3, 1), relu(), maxpool2x2(),
            flatten(), dense(class_count)]


def _output_shapes(layers: Sequence[LayerSpec], input_shape: tuple[int, ...]):
    """Per-layer output shapes (without the batch axis); raises on inconsistency."""
    shapes = []
    shape = tuple(input_shape)
    for i, layer in enumerate(layers):
        if layer.kind == "conv2d":
            if len(shape) != 3:
                raise ValueError(f"layer {i}: conv2d needs an (H, W, C) input, got {shape}")
            h, w, _ = shape
            k, s = layer.kernel_size, layer.stride
            if h < k or w < k:
                raise ValueError(f"layer {i}: kernel {k} larger than input {shape}")
            shape = ((h - k) // s + 1, (w - k) // s + 1, layer.out_channels)
        elif layer.kind == "maxpool2x2":
            if len(shape) != 3 or shape[0] < 2 or shape[1] < 2:
                raise ValueError(f"layer {i}: maxpool2x2 needs an (H>=2, W>=2, C) input")
            shape = (shape[0] // 2, shape[1] // 2, shape[2])
        elif layer.kind == "flatten":
            shape = (int(np.prod(shape)),)
        elif layer.kind == "dense":
            if len(shape) != 1:
                raise ValueError(f"layer {i}: dense needs a flat input; add flatten first")
            shape = (layer.out_features,)
        shapes.append(shape)
    return shapes


@dataclass
class Network:
    layers: tuple[LayerSpec, ...]
    input_shape: tuple[int, int, int]
    class_count: int
    params: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.layers = tuple(self.layers)
        self.input_shape = tuple(int(d) for d in self.input_shape)
        if self.class_count < 2:
            raise ValueError("class_count must be >= 2")
        if not self.layers or self.layers[-1].kind != "dense":
            raise ValueError("the final layer must be dense")
        shapes = _output_shapes(self.layers, self.input_shape)
        if shapes[-1] != (self.class_count,):
            raise ValueError(
                f"final dense layer has {shapes[-1][0]} outputs, expected {self.class_count}")
        expected = self.param_shapes()
        if set(expected) != set(self.params):
            raise ValueError(f"parameter names {sorted(self.params)} do not match "
                             f"{sorted(expected)}")
        for name, shape in expected.items():
            if self.params[name].shape != shape:
                raise ValueError(f"{name} has shape {self.params[name].shape}, expected {shape}")

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        shapes = {}
        in_shape = self.input_shape
        out_shapes = _output_shapes(self.layers, self.input_shape)
        for i, (layer, out_shape) in enumerate(zip(self.layers, out_shapes)):
            if layer.kind == "conv2d":
                k = layer.kernel_size
                shapes[f"{i}.weight"] = (k, k, in_shape[2], layer.out_channels)
                shapes[f"{i}.bias"] = (layer.out_channels,)
            elif layer.kind == "dense":
                shapes[f"{i}.weight"] = (in_shape[0], layer.out_features)
                shapes[f"{i}.bias"] = (layer.out_features,)
            in_shape = out_shape
        return shapes

    def parameter_count(self) -> int:
        return sum(p.size for p in self.params.values())

    def copy(self) -> "Network":
        return Network(self.layers, self.input_shape, self.class_count,
                       {k: v.copy() for k, v in self.params.items()})


def init_network(layers: Sequence[LayerSpec], input_shape, class_count: int,
                 seed: int | np.random.Generator) -> Network:
    """Build a network with Glorot-uniform weights and zero biases."""
    rng = np.random.default_rng(seed)
    layers = tuple(layers)
    input_shape = tuple(input_shape)
    shapes = _output_shapes(layers, input_shape)
    params = {}
    in_shape = input_shape
    for i, (layer, out_shape) in enumerate(zip(layers, shapes)):
        if layer.kind == "conv2d":
            k = layer.kernel_size
            c_in, c_out = in_shape[2], layer.out_channels
            limit = math.sqrt(6.0 / (k * k * c_in + k * k * c_out))
            params[f"{i}.weight"] = rng.uniform(-limit, limit, size=(k, k, c_in, c_out))
            params[f"{i}.bias"] = np.zeros(c_out)
        elif layer.kind == "dense":
            f_in, f_out = in_shape[0], layer.out_features
            limit = math.sqrt(6.0 / (f_in + f_out))
            params[f"{i}.weight"] = rng.uniform(-limit, limit, size=(f_in, f_out))
            params[f"{i}.bias"] = np.zeros(f_out)
        in_shape = out_shape
    return Network(layers, input_shape, class_count, params)


# ---------------------------------------------------------------------------
# batched kernels

def _as_batch(net: Network, x) -> np.ndarray:
    x = np.asarray(x, dtype=DTYPE)
    if x.shape[1:] != net.input_shape:
        raise ValueError(f"input batch shape {x.shape} does not match network input "
                         f"{net.input_shape}")
    return x


def _forward(net: Network, x: np.ndarray):
    caches = []
    for i, layer in enumerate(net.layers):
        kind = layer.kind
        if kind == "conv2d":
            w, b = net.params[f"{i}.weight"], net.params[f"{i}.bias"]
            s = layer.stride
            win = sliding_window_view(x, (layer.kernel_size, layer.kernel_size), axis=(1, 2))
            win = win[:, ::s, ::s]  # (N, Ho, Wo, C, k, k)
            out = np.tensordot(win, w, axes=((4, 5, 3), (0, 1, 2))) + b
            caches.append((x.shape, win))
            x = out
        elif kind == "relu":
            caches.append(x > 0)
            x = np.where(x > 0, x, 0.0)
        elif kind == "maxpool2x2":
            n, h, w_, c = x.shape
            ho, wo = h // 2, w_ // 2
            blocks = (x[:, :2 * ho, :2 * wo]
                      .reshape(n, ho, 2, wo, 2, c)
                      .transpose(0, 1, 3, 5, 2, 4)
                      .reshape(n, ho, wo, c, 4))
            idx = np.argmax(blocks, axis=-1)
            caches.append((x.shape, idx))
            x = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]
        elif kind == "flatten":
            caches.append(x.shape)
            x = x.reshape(x.shape[0], -1)
        elif kind == "dense":
            w, b = net.params[f"{i}.weight"], net.params[f"{i}.bias"]
            caches.append(x)
            x = x @ w + b
    return x, caches


def _backward(net: Network, caches, grad: np.ndarray, need_params: bool = True,
              need_input: bool = True):
    """Propagate ``grad`` (d loss / d logits) back through the network."""
    param_grads = {}
    for i in range(len(net.layers) - 1, -1, -1):
        layer, cache = net.layers[i], caches[i]
        kind = layer.kind
        first = i == 0
        if kind == "conv2d":
            x_shape, win = cache
            w = net.params[f"{i}.weight"]
            k, s = layer.kernel_size, layer.stride
            if need_params:
                # win: (N, Ho, Wo, C, k, k); grad: (N, Ho, Wo, O)
                gw = np.tensordot(win, grad, axes=((0, 1, 2), (0, 1, 2)))  # (C, k, k, O)
                param_grads[f"{i}.weight"] = gw.transpose(1, 2, 0, 3)
                param_grads[f"{i}.bias"] = grad.sum(axis=(0, 1, 2))
            if first and not need_input:
                grad = None
                break
            n, ho, wo, _ = grad.shape
            dx = np.zeros(x_shape)
            for a in range(k):
                for bb in range(k):
                    dx[:, a:a + s * (ho - 1) + 1:s, bb:bb + s * (wo - 1) + 1:s, :] += \
                        grad @ w[a, bb].T
            grad = dx
        elif kind == "relu":
            grad = np.where(cache, grad, 0.0)
        elif kind == "maxpool2x2":
            x_shape, idx = cache
            n, h, w_, c = x_shape
            ho, wo = h // 2, w_ // 2
            blocks = np.zeros((n, ho, wo, c, 4))
            np.put_along_axis(blocks, idx[..., None], grad[..., None], axis=-1)
            dx = np.zeros(x_shape)
            dx[:, :2 * ho, :2 * wo] = (blocks.reshape(n, ho, wo, c, 2, 2)
                                       .transpose(0, 1, 4, 2, 5, 3)
                                       .reshape(n, 2 * ho, 2 * wo, c))
            grad = dx
        elif kind == "flatten":
            grad = grad.reshape(cache)
        elif kind == "dense":
            x = cache
            w = net.params[f"{i}.weight"]
            if need_params:
                param_grads[f"{i}.weight"] = x.T @ grad
                param_grads[f"{i}.bias"] = grad.sum(axis=0)
            if first and not need_input:
                grad = None
                break
            grad = grad @ w.T
    return param_grads, grad


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def logits_batch(net: Network, x) -> np.ndarray:
    return _forward(net, _as_batch(net, x))[0]


def probs_batch(net: Network, x, temperature: float = 1.0) -> np.ndarray:
    """Softmax probabilities for a batch, shape (N, class_count)."""
    if not temperature > 0:
        raise ValueError("temperature must be positive")
    return _softmax(logits_batch(net, x) / temperature)


def _check_labels(net: Network, y) -> np.ndarray:
    y = np.asarray(y)
    if y.size and (y.min() < 0 or y.max() >= net.class_count):
        raise ValueError(f"class index out of range [0, {net.class_count})")
    return y.astype(np.int64)


def loss_and_grads(net: Network, x, targets: np.ndarray, temperature: float = 1.0,
                   need_params: bool = True, need_input: bool = False):
    """Summed cross-entropy of a batch against soft ``targets``.

    The loss is ``-sum_n sum_k t[n,k] log softmax(z[n]/T)[k]``.
    Returns ``(losses, param_grads, input_grad)`` where ``losses`` is per
    example and the gradients are of the sum.
    """
    _, losses, param_grads, dx = _loss_pass(net, x, targets, temperature, need_params,
                                            need_input)
    return losses, param_grads, dx


def _loss_pass(net, x, targets, temperature, need_params, need_input):
    x = _as_batch(net, x)
    z, caches = _forward(net, x)
    logp = _log_softmax(z / temperature)
    losses = -(targets * logp).sum(axis=1)
    dz = (np.exp(logp) * targets.sum(axis=1, keepdims=True) - targets) / temperature
    param_grads, dx = _backward(net, caches, dz, need_params=need_params,
                                need_input=need_input)
    return z, losses, param_grads, dx


def input_gradient_batch(net: Network, x, y) -> tuple[np.ndarray, np.ndarray]:
    """Per-example costs -log p(y|x) and their gradients w.r.t. each input."""
    y = _check_labels(net, y)
    onehot = np.eye(net.class_count)[y]
    losses, _, dx = loss_and_grads(net, x, onehot, need_params=False, need_input=True)
    return losses, dx


# ---------------------------------------------------------------------------
# single-image API

@dataclass
class GradientBundle:
    param_grads: dict[str, np.ndarray]
    input_grad: np.ndarray


def forward_probs(net: Network, x, temperature: float = 1.0) -> np.ndarray:
    """Class probabilities for one image, softmax of logits / temperature."""
    x = np.asarray(x, dtype=DTYPE)
    if x.shape != net.input_shape:
        raise ValueError(f"image shape {x.shape} does not match {net.input_shape}")
    return probs_batch(net, x[None], temperature)[0]


def cost(net: Network, x, y: int) -> float:
    """Negative log-likelihood of class ``y``."""
    y = int(_check_labels(net, [y])[0])
    x = np.asarray(x, dtype=DTYPE)
    if x.shape != net.input_shape:
        raise ValueError(f"image shape {x.shape} does not match {net.input_shape}")
    z = logits_batch(net, x[None])[0]
    return float(-_log_softmax(z)[y]) + 0.0


def input_gradient(net: Network, x, y: int) -> GradientBundle:
    """Exact gradient of ``cost(net, x, y)`` w.r.t. every parameter and ``x``."""
    y = _check_labels(net, [y])
    x = np.asarray(x, dtype=DTYPE)
    if x.shape != net.input_shape:
        raise ValueError(f"image shape {x.shape} does not match {net.input_shape}")
    onehot = np.eye(net.class_count)[y]
    _, pg, dx = loss_and_grads(net, x[None], onehot, need_params=True, need_input=True)
    return GradientBundle(pg, dx[0])


# ---------------------------------------------------------------------------
# training

@dataclass
class TrainConfig:
    learning_rate: float = 0.05
    epochs: int = 5
    batch_size: int = 32
    seed: int = 0
    grad_norm_limit: float | None = None
    label_smoothing: float = 0.0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.grad_norm_limit is not None and self.grad_norm_limit < 0:
            raise ValueError("grad_norm_limit must be non-negative")
        if not 0 <= self.label_smoothing < 1:
            raise ValueError("label_smoothing must lie in [0, 1)")


def global_norm(grads: dict[str, np.ndarray]) -> float:
    return math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))


# (images, labels, targets, rng) -> images; used for adversarial augmentation
BatchHook = Callable[[Network, np.ndarray, np.ndarray, np.ndarray], np.ndarray]


def fit(net: Network, images: np.ndarray, labels: np.ndarray, targets: np.ndarray,
        cfg: TrainConfig, temperature: float = 1.0, loss_scale: float = 1.0,
        batch_hook: BatchHook | None = None):
    """Mini-batch SGD on soft targets. Works on a private copy of ``net``.

    Shuffling uses ``cfg.seed``. ``batch_hook`` may replace batch images
    (it sees the current parameters) before the gradient step.
    """
    n = len(images)
    if n == 0:
        raise ValueError("cannot train on an empty dataset")
    if cfg.batch_size > n:
        raise ValueError(f"batch_size {cfg.batch_size} exceeds dataset size {n}")
    if images.shape[1:] != net.input_shape:
        raise ValueError(f"images of shape {images.shape[1:]} do not fit network input "
                         f"{net.input_shape}")
    if targets.shape != (n, net.class_count):
        raise ValueError("targets must have shape (n, class_count)")
    net = net.copy()
    rng = np.random.default_rng(cfg.seed)
    history = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total_loss = 0.0
        correct = 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xb = images[idx]
            if batch_hook is not None:
                xb = batch_hook(net, xb, labels[idx], targets[idx])
            z, losses, grads, _ = _loss_pass(net, xb, targets[idx], temperature, True, False)
            total_loss += float(losses.sum())
            correct += int(np.sum(np.argmax(z, axis=1) == labels[idx]))
            scale = loss_scale / len(idx)
            for g in grads.values():
                g *= scale
            if cfg.grad_norm_limit is not None:
                norm = global_norm(grads)
                if norm > cfg.grad_norm_limit:
                    factor = cfg.grad_norm_limit / norm
                    for g in grads.values():
                        g *= factor
            for name, g in grads.items():
                net.params[name] -= cfg.learning_rate * g
        for name, p in net.params.items():
            check_finite(p, f"parameter {name}")
        history.append({"epoch": epoch + 1, "loss": total_loss / n, "accuracy": correct / n})
    return net, history


def train_sgd(net: Network, data, cfg: TrainConfig):
    """Train ``net`` on ``data`` with plain SGD.

    Returns the trained copy and a per-epoch history of mean training loss
    and training accuracy. With ``cfg.label_smoothing > 0`` targets come from
    :func:`advlab.defenses.smooth_labels`.
    """
    from .defenses import smooth_label_matrix

    if data.class_count != net.class_count:
        raise ValueError("dataset and network disagree on class_count")
    targets = smooth_label_matrix(data.labels, net.class_count, cfg.label_smoothing)
    return fit(net, data.images, data.labels, targets, cfg)


def predict(net: Network, images: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Argmax class for each image, computed in chunks."""
    out = [np.argmax(logits_batch(net, images[i:i + batch_size]), axis=1)
           for i in range(0, len(images), batch_size)]
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def accuracy(net: Network, images: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(predict(net, images) == labels))


# ---------------------------------------------------------------------------
# checkpoints

def checkpoint_dict(net: Network) -> dict:
    return {
        "version": CHECKPOINT_VERSION,
        "class_count": net.class_count,
        "input_shape": list(net.input_shape),
        "layers": [layer.to_dict() for layer in net.layers],
        "params": {
            name: {"shape": list(p.shape), "data": [float(v) for v in p.ravel()]}
            for name, p in net.params.items()
        },
    }


def dumps_checkpoint(net: Network) -> str:
    # repr-based float formatting round-trips exactly
    return json.dumps(checkpoint_dict(net), separators=(",", ":")) + "\n"


def loads_checkpoint(text: str) -> Network:
    doc = json.loads(text)
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')!r}")
    params = {name: np.array(entry["data"], dtype=DTYPE).reshape(entry["shape"])
              for name, entry in doc["params"].items()}
    layers = [LayerSpec.from_dict(d) for d in doc["layers"]]
    return Network(layers, tuple(doc["input_shape"]), int(doc["class_count"]), params)


def save_checkpoint(net: Network, path) -> None:
    Path(path).write_text(dumps_checkpoint(net))


def load_checkpoint(path) -> Network:
    return loads_checkpoint(Path(path).read_text())
