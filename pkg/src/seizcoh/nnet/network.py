"""Sequential networks, binary cross-entropy training with plain SGD."""
from __future__ import annotations

import enum
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .layers import (
    Activation,
    BatchNormLayer,
    Conv1DLayer,
    DenseLayer,
    DropoutLayer,
    ShapeError,
    make_layer,
    sigmoid,
)

log = logging.getLogger(__name__)


class TrainingDiverged(FloatingPointError):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"training diverged at epoch {epoch} (loss={loss})")
        self.epoch = epoch


class ClassBalancing(str, enum.Enum):
    none = "none"
    weighted = "weighted"
    oversample = "oversample"


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    epochs: int = 500
    batch_size: int = 32
    l1: float = 0.0
    l2: float = 0.0
    seed: int = 0
    class_balancing: ClassBalancing = ClassBalancing.weighted

    def __post_init__(self):
        self.class_balancing = ClassBalancing(self.class_balancing)
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be non-negative")
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")

    def to_dict(self):
        d = asdict(self)
        d["class_balancing"] = self.class_balancing.value
        return d


def _stream(seed: int, key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(key,))))


class Network:
    """A stack of layers ending in a sigmoid activation.

    Parameters
    ----------
    specs : list of layer specs
    input_shape : tuple
        Per-sample input shape: ``(features,)`` or ``(maps, time)``.
    seed : int
        Seeds the uniform He / Xavier initialization.
    dtype : numpy dtype
    init : {"random", "zeros"}
    """

    def __init__(self, specs, input_shape, seed: int = 0, dtype=np.float64, init: str = "random"):
        self.specs = list(specs)
        self.input_shape = tuple(int(s) for s in input_shape)
        self.dtype = np.dtype(dtype)
        self.seed = seed
        if not self.specs or not (isinstance(self.specs[-1], Activation) and self.specs[-1].kind == "sigmoid"):
            raise ShapeError("the last layer must be a sigmoid activation")
        self.layers = [make_layer(s, i) for i, s in enumerate(self.specs)]

        shape = self._internal_shape(self.input_shape)
        self.shapes = [shape]
        for layer in self.layers:
            shape = layer.output_shape(shape)
            self.shapes.append(shape)
        if shape not in ((1,), ()):
            raise ShapeError(f"network output must be a scalar per sample, got {shape}")

        rng = _stream(seed, 0)
        weighted = [i for i, l in enumerate(self.layers) if isinstance(l, (DenseLayer, Conv1DLayer))]
        for i, layer in enumerate(self.layers):
            if hasattr(layer, "init"):
                layer.init(rng, self.dtype, xavier=(i == weighted[-1]) if weighted else False)
        if init == "zeros":
            for layer in self.layers:
                for name in layer.weight_names:
                    layer.params[name][...] = 0

    @staticmethod
    def _internal_shape(shape):
        return (shape[1], shape[0]) if len(shape) == 2 else shape

    def _prepare(self, x):
        x = np.asarray(x, dtype=self.dtype)
        if x.shape[1:] != self.input_shape:
            raise ShapeError(f"layer 0: expected input shape (batch, {self.input_shape}), got {x.shape}")
        return np.ascontiguousarray(x.transpose(0, 2, 1)) if x.ndim == 3 else x

    def logits(self, x, train: bool = False, rng=None) -> np.ndarray:
        h = self._prepare(x)
        for layer in self.layers[:-1]:
            h = layer.forward(h, train, rng)
        return h.reshape(h.shape[0])

    def forward(self, x, mode: str = "infer", rng=None) -> np.ndarray:
        if mode not in ("train", "infer"):
            raise ValueError(f"unknown mode {mode!r}")
        return sigmoid(self.logits(x, mode == "train", rng))

    def backward(self, dlogits: np.ndarray):
        g = dlogits.reshape(-1, 1).astype(self.dtype, copy=False)
        for layer in reversed(self.layers[:-1]):
            g = layer.backward(g)
        return g

    def predict(self, x, batch_size: int = 256) -> np.ndarray:
        x = np.asarray(x)
        out = [self.forward(x[i:i + batch_size]) for i in range(0, len(x), batch_size)]
        return np.concatenate(out) if out else np.empty(0)

    # parameter access ----------------------------------------------------

    def parameters(self):
        """``(layer_index, name, array)`` for every trainable array."""
        return [(l.index, n, a) for l in self.layers for n, a in l.params.items()]

    def buffers(self):
        return [(l.index, n, a) for l in self.layers for n, a in l.buffers.items()]

    def penalty(self, l1: float, l2: float) -> float:
        total = 0.0
        for layer in self.layers:
            for name in layer.weight_names:
                w = layer.params[name]
                total += l1 * np.abs(w).sum() + l2 * np.square(w).sum()
        return float(total)

    def penalty_grads(self, l1: float, l2: float):
        """Add the L1/L2 penalty gradients to the stored gradients."""
        if not (l1 or l2):
            return
        for layer in self.layers:
            for name in layer.weight_names:
                w = layer.params[name]
                layer.grads[name] = layer.grads[name] + l1 * np.sign(w) + 2.0 * l2 * w


def bce_with_logits(z, y, weights=None):
    """Mean (optionally weighted) binary cross-entropy and its gradient w.r.t. ``z``."""
    z = np.asarray(z)
    y = np.asarray(y, dtype=z.dtype)
    w = np.ones_like(z) if weights is None else np.asarray(weights, dtype=z.dtype)
    per = np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))
    n = z.shape[0]
    loss = float(np.sum(w * per) / n)
    grad = w * (sigmoid(z) - y) / n
    return loss, grad


def batch_loss(net: Network, x, y, weights=None, l1=0.0, l2=0.0, rng=None, train=True):
    z = net.logits(x, train, rng)
    loss, grad = bce_with_logits(z, y, weights)
    return loss + net.penalty(l1, l2), grad


def class_weights(labels) -> np.ndarray:
    """Inverse class frequency, normalized so that the weights average to one."""
    y = np.asarray(labels).astype(int)
    n = y.size
    counts = np.bincount(y, minlength=2).astype(float)
    per_class = np.where(counts > 0, n / (2.0 * np.maximum(counts, 1)), 0.0)
    return per_class[y]


@dataclass
class TrainedModel:
    network: Network
    config: TrainConfig
    history: dict = field(default_factory=dict)

    def predict(self, x, batch_size: int = 256) -> np.ndarray:
        return self.network.predict(x, batch_size)


def forward(model, batch, mode: str = "infer", rng=None) -> np.ndarray:
    net = model.network if isinstance(model, TrainedModel) else model
    return net.forward(batch, mode, rng)


def _epoch_order(rng, labels, balancing):
    n = labels.size
    if balancing is not ClassBalancing.oversample:
        return rng.permutation(n)
    pos = np.flatnonzero(labels == 1)
    neg = np.flatnonzero(labels == 0)
    small, big = (pos, neg) if pos.size < neg.size else (neg, pos)
    extra = rng.choice(small, big.size - small.size, replace=True) if small.size else small
    return rng.permutation(np.concatenate([big, small, extra]))


def train(spec, data, labels, cfg: TrainConfig = TrainConfig(), input_shape=None,
          dtype=np.float64, network: Network | None = None, callback=None) -> TrainedModel:
    """Fit a network by mini-batch SGD on weighted binary cross-entropy + L1/L2.

    ``network`` may be given to continue from existing parameters; otherwise
    a fresh one is built from ``spec`` with ``cfg.seed``.
    """
    x = np.asarray(data)
    y = np.asarray(labels).astype(np.float64).ravel()
    if not np.all(np.isfinite(x)):
        raise ValueError("training data contain non-finite values")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be binary")
    if network is None:
        network = Network(spec, input_shape or x.shape[1:], seed=cfg.seed, dtype=dtype)
    net = network
    w_all = class_weights(y) if cfg.class_balancing is ClassBalancing.weighted else np.ones_like(y)
    shuffle_rng = _stream(cfg.seed, 1)
    dropout_rng = _stream(cfg.seed, 2)
    has_bn = any(isinstance(l, BatchNormLayer) for l in net.layers)
    params = [(l, n) for l in net.layers for n in l.params]

    losses, smoothed = [], []
    for epoch in range(cfg.epochs):
        order = _epoch_order(shuffle_rng, y, cfg.class_balancing)
        total, seen = 0.0, 0
        for i0 in range(0, order.size, cfg.batch_size):
            idx = order[i0:i0 + cfg.batch_size]
            if has_bn and idx.size < 2:
                continue
            loss, grad = batch_loss(net, x[idx], y[idx], w_all[idx], cfg.l1, cfg.l2, dropout_rng)
            if not np.isfinite(loss):
                raise TrainingDiverged(epoch, loss)
            net.backward(grad)
            net.penalty_grads(cfg.l1, cfg.l2)
            if cfg.learning_rate:
                for layer, name in params:
                    layer.params[name] -= (cfg.learning_rate * layer.grads[name]).astype(net.dtype, copy=False)
            total += loss * idx.size
            seen += idx.size
        mean = total / max(seen, 1)
        if not np.isfinite(mean):
            raise TrainingDiverged(epoch, mean)
        losses.append(mean)
        smoothed.append(min(mean, smoothed[-1]) if smoothed else mean)
        if callback is not None:
            callback(epoch, mean)
    for layer in net.layers:
        layer.__dict__.pop("_cache", None)
    return TrainedModel(net, cfg, {"loss": losses, "smoothed_loss": smoothed})
