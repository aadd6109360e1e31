"""Minimal dense feedforward network engine.

Plain numpy implementation: affine layers with relu/sigmoid/softmax/identity
activations, cross-entropy SGD training (optionally under a binary weight
mask), frame accuracy and parameter accounting. Everything is float64 and
deterministic for a fixed seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("relu", "sigmoid", "softmax", "identity")

# posteriors are clamped here before taking logs so the loss stays finite
POSTERIOR_EPS = 1e-12


class ShapeError(ValueError):
    """Input dimensions do not match the network."""


def _softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _activate(name, z):
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "sigmoid":
        return 1.0 / (1.0 + np.exp(-z))
    if name == "softmax":
        return _softmax(z)
    if name == "identity":
        return z
    raise ValueError(f"unknown activation {name!r}")


def _activation_grad(name, z, post):
    """d(post)/d(pre) for elementwise activations. Softmax is handled in the
    loss backward pass and is rejected here."""
    if name == "relu":
        return (z > 0.0).astype(np.float64)
    if name == "sigmoid":
        return post * (1.0 - post)
    if name == "identity":
        return np.ones_like(z)
    raise ValueError(f"no elementwise gradient for activation {name!r}")


@dataclass
class Layer:
    """One affine stage: weights (out_dim x in_dim), bias (out_dim), activation."""

    weights: np.ndarray
    bias: np.ndarray
    activation: str

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2:
            raise ShapeError("layer weights must be 2-D")
        if self.bias.shape != (self.weights.shape[0],):
            raise ShapeError(
                f"bias length {self.bias.shape} does not match "
                f"{self.weights.shape[0]} output rows"
            )
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if not np.all(np.isfinite(self.weights)) or not np.all(np.isfinite(self.bias)):
            raise ValueError("layer parameters must be finite")

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    def copy(self) -> "Layer":
        return Layer(self.weights.copy(), self.bias.copy(), self.activation)


@dataclass
class DenseNet:
    """Feedforward stack of Layers. Softmax is only allowed on the final layer."""

    layers: list[Layer]
    input_dim: int

    def __post_init__(self):
        if not self.layers:
            raise ValueError("network needs at least one layer")
        prev = self.input_dim
        for k, layer in enumerate(self.layers):
            if layer.in_dim != prev:
                raise ShapeError(
                    f"layer {k} expects input dim {layer.in_dim}, got {prev}"
                )
            if layer.activation == "softmax" and k != len(self.layers) - 1:
                raise ValueError("softmax only permitted on the final layer")
            prev = layer.out_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim

    def copy(self) -> "DenseNet":
        return DenseNet([l.copy() for l in self.layers], self.input_dim)

    @classmethod
    def init_random(
        cls,
        input_dim: int,
        hidden_dims: list[int],
        num_classes: int,
        seed: int,
        hidden_activation: str = "relu",
    ) -> "DenseNet":
        """Glorot-uniform weights (+-sqrt(6/(fan_in+fan_out))), zero biases,
        relu hidden layers and a softmax output head."""
        rng = np.random.Generator(np.random.PCG64(seed))
        dims = [input_dim] + list(hidden_dims) + [num_classes]
        layers = []
        for k in range(len(dims) - 1):
            fan_in, fan_out = dims[k], dims[k + 1]
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            w = rng.uniform(-bound, bound, size=(fan_out, fan_in))
            act = "softmax" if k == len(dims) - 2 else hidden_activation
            layers.append(Layer(w, np.zeros(fan_out), act))
        return cls(layers, input_dim)


@dataclass
class FrameDataset:
    """Labelled feature frames: features (N x feature_dim), labels (N,)."""

    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise ShapeError("features must be N x feature_dim")
        if self.labels.shape != (self.features.shape[0],):
            raise ShapeError("labels must be one per frame")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError("labels must lie in [0, num_classes)")

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]


@dataclass
class TrainConfig:
    learning_rate: float
    epochs: int
    batch_size: int
    seed: int
    lr_decay: float = 1.0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if not 0.0 < self.lr_decay <= 1.0:
            raise ValueError("lr_decay must be in (0, 1]")


@dataclass
class TrainReport:
    initial_loss: float
    epoch_losses: list[float] = field(default_factory=list)

    @property
    def final_loss(self) -> float:
        return self.epoch_losses[-1] if self.epoch_losses else self.initial_loss


@dataclass
class ForwardTrace:
    """Per-layer affine outputs and activations for a single input."""

    pre_activations: list[np.ndarray]
    post_activations: list[np.ndarray]

    @property
    def output(self) -> np.ndarray:
        return self.post_activations[-1]


def forward(net: DenseNet, x) -> ForwardTrace:
    """Run one input vector through the network, recording every stage."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (net.input_dim,):
        raise ShapeError(f"input has shape {x.shape}, expected ({net.input_dim},)")
    pre, post = [], []
    a = x
    for layer in net.layers:
        z = layer.weights @ a + layer.bias
        a = _activate(layer.activation, z)
        pre.append(z)
        post.append(a)
    return ForwardTrace(pre, post)


def forward_batch(net: DenseNet, X: np.ndarray):
    """Batched forward pass. Returns (pre_list, post_list); post_list[-1] are
    the output posteriors, one row per frame."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != net.input_dim:
        raise ShapeError(f"batch has shape {X.shape}, expected (N, {net.input_dim})")
    pre, post = [], []
    a = X
    for layer in net.layers:
        z = a @ layer.weights.T + layer.bias
        a = _activate(layer.activation, z)
        pre.append(z)
        post.append(a)
    return pre, post


def posteriors(net: DenseNet, X: np.ndarray) -> np.ndarray:
    return forward_batch(net, X)[1][-1]


def cross_entropy(net: DenseNet, data: FrameDataset) -> float:
    """Mean negative log-likelihood of the labels, with outputs clamped at
    POSTERIOR_EPS so the value is always finite."""
    p = posteriors(net, data.features)
    picked = p[np.arange(len(data)), data.labels]
    return float(-np.log(np.maximum(picked, POSTERIOR_EPS)).mean())


def frame_accuracy(net: DenseNet, data: FrameDataset) -> float:
    """Fraction of frames whose argmax posterior equals the label.
    Ties break toward the lowest class index (np.argmax convention)."""
    if len(data) == 0:
        raise ValueError("empty dataset")
    p = posteriors(net, data.features)
    return float((np.argmax(p, axis=1) == data.labels).mean())


def param_count(net: DenseNet) -> int:
    """Stored parameters: weights plus biases over all layers."""
    return sum(l.weights.size + l.bias.size for l in net.layers)


def _backward(net, pre, post, X, labels):
    """Backprop of the mean cross-entropy over the batch.

    Returns per-layer (dW, db). The softmax head uses the fused
    softmax+cross-entropy gradient; clamping only affects loss values.
    """
    n = X.shape[0]
    out = post[-1]
    last = net.layers[-1]
    onehot = np.zeros_like(out)
    onehot[np.arange(n), labels] = 1.0
    if last.activation == "softmax":
        delta = (out - onehot) / n
    else:
        # d(-log max(p_label, eps))/dp is zero inside the clamp
        dpost = np.zeros_like(out)
        picked = out[np.arange(n), labels]
        live = picked > POSTERIOR_EPS
        rows = np.arange(n)[live]
        dpost[rows, labels[live]] = -1.0 / (picked[live] * n)
        delta = dpost * _activation_grad(last.activation, pre[-1], out)

    grads = [None] * len(net.layers)
    for k in range(len(net.layers) - 1, -1, -1):
        a_prev = X if k == 0 else post[k - 1]
        grads[k] = (delta.T @ a_prev, delta.sum(axis=0))
        if k > 0:
            layer_prev = net.layers[k - 1]
            delta = (delta @ net.layers[k].weights) * _activation_grad(
                layer_prev.activation, pre[k - 1], post[k - 1]
            )
    return grads


def loss_gradients(net: DenseNet, data: FrameDataset):
    """Analytic gradient of cross_entropy(net, data) w.r.t. every weight and
    bias. Returns a list of (dW, db) matching net.layers."""
    pre, post = forward_batch(net, data.features)
    return _backward(net, pre, post, data.features, data.labels)


def per_frame_deltas(net: DenseNet, data: FrameDataset):
    """Backprop rows kept per frame: for each layer, (delta, a_prev) with
    delta[k] the gradient of frame k's own loss w.r.t. that layer's affine
    output. Used by the second-order pruning criteria."""
    X = data.features
    pre, post = forward_batch(net, X)
    out = post[-1]
    n = X.shape[0]
    last = net.layers[-1]
    onehot = np.zeros_like(out)
    onehot[np.arange(n), data.labels] = 1.0
    if last.activation == "softmax":
        delta = out - onehot
    else:
        dpost = np.zeros_like(out)
        picked = out[np.arange(n), data.labels]
        live = picked > POSTERIOR_EPS
        rows = np.arange(n)[live]
        dpost[rows, data.labels[live]] = -1.0 / picked[live]
        delta = dpost * _activation_grad(last.activation, pre[-1], out)

    result = [None] * len(net.layers)
    for k in range(len(net.layers) - 1, -1, -1):
        a_prev = X if k == 0 else post[k - 1]
        result[k] = (delta, a_prev)
        if k > 0:
            layer_prev = net.layers[k - 1]
            delta = (delta @ net.layers[k].weights) * _activation_grad(
                layer_prev.activation, pre[k - 1], post[k - 1]
            )
    return result


def train_sgd(net: DenseNet, data: FrameDataset, cfg: TrainConfig, mask=None) -> TrainReport:
    """Minibatch SGD on mean cross-entropy, in place.

    If a mask is given (anything exposing per-layer 0/1 arrays via
    `mask.layers`), masked weights receive no updates and are forced back to
    exactly zero after every step. The epoch shuffle stream is fixed by
    cfg.seed, so identical inputs give bit-identical results.
    """
    if len(data) == 0:
        raise ValueError("empty dataset")
    if data.feature_dim != net.input_dim:
        raise ShapeError("dataset feature_dim does not match network input_dim")
    mask_arrays = None
    if mask is not None:
        mask_arrays = [np.asarray(m, dtype=np.float64) for m in mask.layers]
        if len(mask_arrays) != len(net.layers):
            raise ShapeError("mask layer count does not match network")
        for m, layer in zip(mask_arrays, net.layers):
            if m.shape != layer.weights.shape:
                raise ShapeError("mask shape does not match layer weights")

    report = TrainReport(initial_loss=cross_entropy(net, data))
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    n = len(data)
    for epoch in range(cfg.epochs):
        lr = cfg.learning_rate * cfg.lr_decay**epoch
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            Xb = data.features[idx]
            yb = data.labels[idx]
            pre, post = forward_batch(net, Xb)
            grads = _backward(net, pre, post, Xb, yb)
            for k, layer in enumerate(net.layers):
                dw, db = grads[k]
                if mask_arrays is not None:
                    dw = dw * mask_arrays[k]
                layer.weights -= lr * dw
                layer.bias -= lr * db
                if mask_arrays is not None:
                    layer.weights *= mask_arrays[k]
        report.epoch_losses.append(cross_entropy(net, data))
    return report
