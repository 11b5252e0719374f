"""Minimal differentiable layer stack with explicit backpropagation.

Supported layer kinds: Conv1d, ReLU, MaxPool1d, Flatten, Dense, Dropout,
SigmoidDense. Convolutional layers operate on (batch, channels, length)
arrays, dense layers on (batch, features).

Freezing is applied at optimizer-update time, never by truncating backprop:
gradients always flow through frozen layers so earlier trainable layers keep
learning and full-stack gradient checks stay possible.

Forward passes return an explicit cache that backward consumes; layers hold
parameters but no activation state, so inference is reentrant.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConfigError,
    InputError,
    NumericError,
    ShapeError,
    StateError,
    TrainingError,
)

BCE_EPS = 1e-7


@dataclass
class LayerSpec:
    """Declarative layer description; hyperparameters depend on kind."""

    kind: str
    out_channels: int = 0
    kernel_size: int = 0
    stride: int = 1
    window: int = 0
    out_dim: int = 0
    rate: float = 0.0

    KINDS = ("Conv1d", "ReLU", "MaxPool1d", "Flatten", "Dense", "Dropout", "SigmoidDense")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ConfigError(f"unknown layer kind {self.kind!r}")
        if self.kind == "Dropout" and not (0.0 <= self.rate < 1.0):
            raise ConfigError("dropout rate must be in [0, 1)")
        if self.kind == "Conv1d" and (self.out_channels < 1 or self.kernel_size < 1
                                      or self.stride < 1):
            raise ConfigError("Conv1d needs out_channels/kernel_size/stride >= 1")

    @property
    def has_params(self) -> bool:
        return self.kind in ("Conv1d", "Dense", "SigmoidDense")

    def to_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "LayerSpec":
        return cls(**d)


def conv_output_length(length: int, kernel_size: int, stride: int) -> int:
    if length < kernel_size:
        raise ShapeError(f"input length {length} shorter than kernel {kernel_size}")
    return (length - kernel_size) // stride + 1


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    # saturated values round to exactly 0/1 in floating point; keep the
    # strict (0, 1) output contract
    tiny = np.finfo(out.dtype).tiny
    return np.clip(out, tiny, 1.0 - np.finfo(out.dtype).epsneg)


class Layer:
    """Base layer: parameter dict plus pure forward/backward."""

    spec: LayerSpec

    def params(self) -> dict:
        return {}

    def forward(self, x, training=False, rng=None):
        raise NotImplementedError

    def backward(self, cache, dy):
        """Return (dx, {param_name: grad})."""
        raise NotImplementedError


class Conv1d(Layer):
    """Valid cross-correlation over (batch, channels, length)."""

    def __init__(self, spec, in_channels, rng, dtype):
        self.spec = spec
        k, f = spec.kernel_size, spec.out_channels
        scale = np.sqrt(2.0 / (in_channels * k))
        self.weight = (rng.standard_normal((f, in_channels, k)) * scale).astype(dtype)
        self.bias = np.zeros(f, dtype=dtype)

    def params(self):
        return {"weight": self.weight, "bias": self.bias}

    def _window_index(self, length):
        k, s = self.spec.kernel_size, self.spec.stride
        out_len = conv_output_length(length, k, s)
        return np.arange(out_len)[:, None] * s + np.arange(k)[None, :]

    def forward(self, x, training=False, rng=None):
        if x.ndim != 3 or x.shape[1] != self.weight.shape[1]:
            raise ShapeError(f"Conv1d expects (batch, {self.weight.shape[1]}, length), got {x.shape}")
        idx = self._window_index(x.shape[2])
        cols = x[:, :, idx]  # (B, C, out_len, K)
        y = np.einsum("bcok,fck->bfo", cols, self.weight) + self.bias[None, :, None]
        return y.astype(x.dtype, copy=False), (x.shape, cols, idx)

    def backward(self, cache, dy):
        x_shape, cols, idx = cache
        dw = np.einsum("bcok,bfo->fck", cols, dy)
        db = dy.sum(axis=(0, 2))
        dcols = np.einsum("bfo,fck->bcok", dy, self.weight)
        dx = np.zeros(x_shape, dtype=dy.dtype)
        np.add.at(dx, (slice(None), slice(None), idx), dcols)
        return dx, {"weight": dw, "bias": db}


class ReLU(Layer):
    def __init__(self, spec):
        self.spec = spec

    def forward(self, x, training=False, rng=None):
        mask = x > 0
        return x * mask, mask

    def backward(self, cache, dy):
        return dy * cache, {}


class MaxPool1d(Layer):
    """Non-overlapping max pooling with window == stride; trailing remainder dropped."""

    def __init__(self, spec):
        self.spec = spec
        if spec.window < 1:
            raise ConfigError("pool window must be >= 1")

    def forward(self, x, training=False, rng=None):
        b, c, length = x.shape
        w = self.spec.window
        out_len = length // w
        if out_len < 1:
            raise ShapeError(f"pool window {w} larger than length {length}")
        trimmed = x[:, :, :out_len * w].reshape(b, c, out_len, w)
        argmax = trimmed.argmax(axis=3)
        y = np.take_along_axis(trimmed, argmax[..., None], axis=3)[..., 0]
        return y, (x.shape, argmax)

    def backward(self, cache, dy):
        x_shape, argmax = cache
        b, c, length = x_shape
        w = self.spec.window
        out_len = argmax.shape[2]
        dtr = np.zeros((b, c, out_len, w), dtype=dy.dtype)
        np.put_along_axis(dtr, argmax[..., None], dy[..., None], axis=3)
        dx = np.zeros(x_shape, dtype=dy.dtype)
        dx[:, :, :out_len * w] = dtr.reshape(b, c, out_len * w)
        return dx, {}


class Flatten(Layer):
    def __init__(self, spec):
        self.spec = spec

    def forward(self, x, training=False, rng=None):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, cache, dy):
        return dy.reshape(cache), {}


class Dense(Layer):
    def __init__(self, spec, in_dim, rng, dtype, sigmoid=False):
        self.spec = spec
        self.sigmoid = sigmoid
        out_dim = spec.out_dim
        if sigmoid:
            scale = np.sqrt(1.0 / in_dim)  # Glorot-ish for the sigmoid head
        else:
            scale = np.sqrt(2.0 / in_dim)
        self.weight = (rng.standard_normal((in_dim, out_dim)) * scale).astype(dtype)
        self.bias = np.zeros(out_dim, dtype=dtype)

    def params(self):
        return {"weight": self.weight, "bias": self.bias}

    def forward(self, x, training=False, rng=None):
        if x.ndim != 2 or x.shape[1] != self.weight.shape[0]:
            raise ShapeError(f"Dense expects (batch, {self.weight.shape[0]}), got {x.shape}")
        z = x @ self.weight + self.bias
        if self.sigmoid:
            y = _sigmoid(z)
            return y, (x, y)
        return z, (x, None)

    def backward(self, cache, dy):
        x, y = cache
        if self.sigmoid:
            dy = dy * y * (1.0 - y)
        dw = x.T @ dy
        db = dy.sum(axis=0)
        dx = dy @ self.weight.T
        return dx, {"weight": dw, "bias": db}


class Dropout(Layer):
    """Inverted dropout: scaling happens at train time, inference is identity."""

    def __init__(self, spec):
        self.spec = spec

    def forward(self, x, training=False, rng=None):
        rate = self.spec.rate
        if not training or rate == 0.0:
            return x, None
        if rng is None:
            raise StateError("Dropout in training mode needs an rng")
        keep = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
        return x * keep, keep

    def backward(self, cache, dy):
        if cache is None:
            return dy, {}
        return dy * cache, {}


def _build_layer(spec, in_shape, rng, dtype):
    """Instantiate one layer and infer its output shape."""
    if spec.kind == "Conv1d":
        if len(in_shape) != 2:
            raise ShapeError("Conv1d needs (channels, length) input")
        c, length = in_shape
        out_len = conv_output_length(length, spec.kernel_size, spec.stride)
        return Conv1d(spec, c, rng, dtype), (spec.out_channels, out_len)
    if spec.kind == "ReLU":
        return ReLU(spec), in_shape
    if spec.kind == "MaxPool1d":
        c, length = in_shape
        out_len = length // spec.window
        if out_len < 1:
            raise ShapeError(f"pool window {spec.window} larger than length {length}")
        return MaxPool1d(spec), (c, out_len)
    if spec.kind == "Flatten":
        flat = int(np.prod(in_shape))
        return Flatten(spec), (flat,)
    if spec.kind == "Dense":
        if len(in_shape) != 1:
            raise ShapeError("Dense needs flat input")
        return Dense(spec, in_shape[0], rng, dtype, sigmoid=False), (spec.out_dim,)
    if spec.kind == "SigmoidDense":
        if len(in_shape) != 1:
            raise ShapeError("SigmoidDense needs flat input")
        return Dense(spec, in_shape[0], rng, dtype, sigmoid=True), (spec.out_dim,)
    if spec.kind == "Dropout":
        return Dropout(spec), in_shape
    raise ConfigError(f"unknown layer kind {spec.kind!r}")


class LayerStack:
    """Ordered layers plus a per-layer freeze mask (True = frozen)."""

    def __init__(self, layers, freeze_mask=None, input_shape=None):
        self.layers = list(layers)
        self.freeze_mask = list(freeze_mask) if freeze_mask is not None \
            else [False] * len(self.layers)
        if len(self.freeze_mask) != len(self.layers):
            raise ConfigError("freeze_mask length must equal layer count")
        self.input_shape = input_shape

    def __len__(self):
        return len(self.layers)

    @property
    def specs(self):
        return [layer.spec for layer in self.layers]

    def params(self):
        """{layer_index: {name: array}} for parameterized layers."""
        return {i: layer.params() for i, layer in enumerate(self.layers) if layer.params()}

    def copy(self) -> "LayerStack":
        return copy.deepcopy(self)

    def forward(self, x, training=False, rng=None, upto=None):
        """Run the stack, returning (output, caches).

        ``upto`` stops after that many layers (used for embedding extraction).
        """
        caches = []
        out = x
        stop = len(self.layers) if upto is None else upto
        for i, layer in enumerate(self.layers[:stop]):
            out, cache = layer.forward(out, training=training, rng=rng)
            if not np.all(np.isfinite(out)):
                raise NumericError(f"non-finite output at layer {i} ({layer.spec.kind})")
            caches.append(cache)
        return out, caches

    def backward(self, caches, grad_out):
        """Per-layer parameter gradients (frozen layers included) plus input grad.

        Returns (dx, grads) where grads is {layer_index: {name: grad}}.
        """
        if len(caches) != len(self.layers):
            raise StateError("forward cache does not match stack depth")
        grads = {}
        dy = grad_out
        for i in range(len(self.layers) - 1, -1, -1):
            dy, layer_grads = self.layers[i].backward(caches[i], dy)
            if layer_grads:
                grads[i] = layer_grads
        return dy, grads


def build_stack(specs, input_shape, seed=0, dtype=np.float32) -> LayerStack:
    """Initialize a stack from layer specs, validating the shape chain."""
    rng = np.random.default_rng([int(seed), 8])
    layers = []
    shape = tuple(input_shape)
    for spec in specs:
        layer, shape = _build_layer(spec, shape, rng, np.dtype(dtype))
        layers.append(layer)
    return LayerStack(layers, input_shape=tuple(input_shape))


def set_trainable_last_k(stack: LayerStack, k: int) -> list:
    """Unfreeze the last k layers, freeze all earlier ones; returns the new mask."""
    n = len(stack)
    if not (0 <= k <= n):
        raise ConfigError(f"k must be in [0, {n}], got {k}")
    stack.freeze_mask = [i < n - k for i in range(n)]
    return list(stack.freeze_mask)


def trainable_param_layers(stack: LayerStack) -> list:
    """Indices of parameterized layers the optimizer may update."""
    return [i for i, layer in enumerate(stack.layers)
            if layer.params() and not stack.freeze_mask[i]]


def bce_loss(predictions, labels) -> float:
    """Mean binary cross-entropy with predictions clamped to [eps, 1-eps]."""
    p = np.clip(np.asarray(predictions, dtype=float).ravel(), BCE_EPS, 1.0 - BCE_EPS)
    y = np.asarray(labels, dtype=float).ravel()
    if not np.all(np.isin(y, (0.0, 1.0))):
        raise InputError("labels must be 0 or 1")
    if p.shape != y.shape:
        raise ShapeError("predictions and labels must have equal length")
    return float(np.mean(-(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))))


def bce_grad(predictions, labels):
    """d(mean BCE)/d(predictions), same shape as predictions."""
    shape = np.shape(predictions)
    p = np.clip(np.asarray(predictions, dtype=float).ravel(), BCE_EPS, 1.0 - BCE_EPS)
    y = np.asarray(labels, dtype=float).ravel()
    g = (p - y) / (p * (1.0 - p)) / p.size
    return g.reshape(shape)


class Adam:
    """Adaptive-moment optimizer with bias correction; skips frozen layers."""

    def __init__(self, learning_rate, beta1=0.9, beta2=0.999, eps=1e-8, clip_norm=None):
        if learning_rate < 0:
            raise ConfigError("learning_rate must be >= 0")
        self.lr = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.clip_norm = clip_norm
        self.t = 0
        self._m = {}
        self._v = {}

    def step(self, stack: LayerStack, grads: dict):
        updatable = trainable_param_layers(stack)
        if self.clip_norm is not None:
            _clip_gradients(grads, updatable, self.clip_norm)
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for i in updatable:
            for name, g in grads.get(i, {}).items():
                key = (i, name)
                m = self._m.get(key)
                if m is None:
                    m = np.zeros_like(g, dtype=np.float64)
                    v = np.zeros_like(g, dtype=np.float64)
                else:
                    v = self._v[key]
                m = self.beta1 * m + (1.0 - self.beta1) * g
                v = self.beta2 * v + (1.0 - self.beta2) * (g * g)
                self._m[key], self._v[key] = m, v
                param = stack.layers[i].params()[name]
                update = self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
                param -= update.astype(param.dtype)


class SGD:
    """Plain stochastic gradient descent; skips frozen layers."""

    def __init__(self, learning_rate, clip_norm=None):
        if learning_rate < 0:
            raise ConfigError("learning_rate must be >= 0")
        self.lr = learning_rate
        self.clip_norm = clip_norm

    def step(self, stack: LayerStack, grads: dict):
        updatable = trainable_param_layers(stack)
        if self.clip_norm is not None:
            _clip_gradients(grads, updatable, self.clip_norm)
        for i in updatable:
            for name, g in grads.get(i, {}).items():
                param = stack.layers[i].params()[name]
                param -= (self.lr * g).astype(param.dtype)


def _clip_gradients(grads, layer_indices, max_norm):
    total = 0.0
    for i in layer_indices:
        for g in grads.get(i, {}).values():
            total += float(np.sum(np.square(g, dtype=np.float64)))
    norm = np.sqrt(total)
    if norm > max_norm > 0:
        scale = max_norm / norm
        for i in layer_indices:
            for g in grads.get(i, {}).values():
                g *= scale


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 64
    learning_rate: float = 1e-3
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    clip_norm: float | None = None
    optimizer: str = "adam"

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")

    def make_optimizer(self):
        if self.optimizer == "adam":
            return Adam(self.learning_rate, self.beta1, self.beta2, clip_norm=self.clip_norm)
        if self.optimizer == "sgd":
            return SGD(self.learning_rate, clip_norm=self.clip_norm)
        raise ConfigError(f"unknown optimizer {self.optimizer!r}")


def train(stack: LayerStack, inputs, labels, config: TrainConfig,
          targets_are_vectors=False):
    """Mini-batch training with BCE loss; returns the per-epoch mean loss trace.

    The stack is updated in place. Frozen layers never change. Deterministic
    for a fixed seed: one rng drives epoch shuffling and dropout masks.
    """
    x = np.asarray(inputs)
    y = np.asarray(labels)
    n = x.shape[0]
    if n == 0:
        raise TrainingError("need at least one training sample")
    rng = np.random.default_rng([int(config.seed), 10])
    optimizer = config.make_optimizer()
    trace = []
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        seen = 0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            xb, yb = x[idx], y[idx]
            out, caches = stack.forward(xb, training=True, rng=rng)
            pred = out if targets_are_vectors else out.ravel()
            loss = bce_loss(pred, yb.ravel() if targets_are_vectors else yb)
            if not np.isfinite(loss):
                raise TrainingError(f"loss diverged at epoch {epoch}")
            grad = bce_grad(pred, yb.ravel() if targets_are_vectors else yb)
            _, grads = stack.backward(caches, grad.reshape(out.shape).astype(out.dtype))
            optimizer.step(stack, grads)
            epoch_loss += loss * len(idx)
            seen += len(idx)
        trace.append(epoch_loss / seen)
    return trace
