"""Layer specifications and their numpy forward/backward implementations.

Sequence tensors are ``(batch, time, maps)`` inside the network; the
network transposes ``(batch, maps, time)`` inputs once on entry.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np


class ShapeError(ValueError):
    pass


# --------------------------------------------------------------------------
# specs
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Dense:
    in_features: int
    out_features: int


@dataclass(frozen=True)
class Conv1D:
    in_maps: int
    out_maps: int
    kernel: int
    stride: int = 1


@dataclass(frozen=True)
class MaxPool1D:
    kernel: int


@dataclass(frozen=True)
class AvgPool1D:
    kernel: int


@dataclass(frozen=True)
class BatchNorm:
    features: int
    momentum: float = 0.1
    eps: float = 1e-6


@dataclass(frozen=True)
class Dropout:
    p: float


@dataclass(frozen=True)
class Activation:
    kind: str  # "relu" | "sigmoid"


@dataclass(frozen=True)
class Flatten:
    pass


SPEC_TYPES = {cls.__name__: cls for cls in (Dense, Conv1D, MaxPool1D, AvgPool1D, BatchNorm,
                                             Dropout, Activation, Flatten)}


def spec_to_dict(spec) -> dict:
    return {"type": type(spec).__name__, **asdict(spec)}


def spec_from_dict(d: dict):
    d = dict(d)
    return SPEC_TYPES[d.pop("type")](**d)


# --------------------------------------------------------------------------
# implementations
# --------------------------------------------------------------------------

class Layer:
    weight_names: tuple[str, ...] = ()

    def __init__(self, spec, index: int):
        self.spec = spec
        self.index = index
        self.params: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def output_shape(self, shape: tuple) -> tuple:
        return shape

    def _bad(self, msg):
        return ShapeError(f"layer {self.index} ({type(self.spec).__name__}): {msg}")

    def forward(self, x, train: bool, rng=None):
        raise NotImplementedError

    def backward(self, g):
        raise NotImplementedError


class DenseLayer(Layer):
    weight_names = ("w",)

    def output_shape(self, shape):
        if len(shape) != 1 or shape[0] != self.spec.in_features:
            raise self._bad(f"expects ({self.spec.in_features},) input, got {shape}")
        return (self.spec.out_features,)

    def init(self, rng, dtype, xavier: bool):
        fan_in, fan_out = self.spec.in_features, self.spec.out_features
        lim = np.sqrt(6.0 / (fan_in + fan_out)) if xavier else np.sqrt(6.0 / fan_in)
        self.params["w"] = rng.uniform(-lim, lim, (fan_in, fan_out)).astype(dtype)
        self.params["b"] = np.zeros(fan_out, dtype)

    def forward(self, x, train, rng=None):
        if x.ndim != 2 or x.shape[1] != self.spec.in_features:
            raise self._bad(f"got input of shape {x.shape}")
        self._x = x
        return x @ self.params["w"] + self.params["b"]

    def backward(self, g):
        self.grads["w"] = self._x.T @ g
        self.grads["b"] = g.sum(axis=0)
        return g @ self.params["w"].T


class Conv1DLayer(Layer):
    weight_names = ("w",)

    def output_shape(self, shape):
        s = self.spec
        if len(shape) != 2 or shape[1] != s.in_maps:
            raise self._bad(f"expects (time, {s.in_maps}) input, got {shape}")
        t_out = (shape[0] - s.kernel) // s.stride + 1
        if t_out < 1:
            raise self._bad(f"kernel {s.kernel} longer than input length {shape[0]}")
        return (t_out, s.out_maps)

    def init(self, rng, dtype, xavier: bool):
        s = self.spec
        fan_in = s.in_maps * s.kernel
        lim = np.sqrt(6.0 / (fan_in + s.out_maps * s.kernel)) if xavier else np.sqrt(6.0 / fan_in)
        self.params["w"] = rng.uniform(-lim, lim, (s.out_maps, s.in_maps, s.kernel)).astype(dtype)
        self.params["b"] = np.zeros(s.out_maps, dtype)

    def _cols(self, x, t_out):
        # (b * t_out, kernel * maps), tap-major so each tap's maps are contiguous
        s = self.spec
        win = np.lib.stride_tricks.sliding_window_view(x, s.kernel, axis=1)[:, ::s.stride][:, :t_out]
        return np.ascontiguousarray(win.transpose(0, 1, 3, 2)).reshape(-1, s.kernel * s.in_maps)

    def _wmat(self):
        # (kernel * maps, out_maps) matching the column layout
        return self.params["w"].transpose(2, 1, 0).reshape(-1, self.spec.out_maps)

    def forward(self, x, train, rng=None):
        s = self.spec
        if x.ndim != 3 or x.shape[2] != s.in_maps:
            raise self._bad(f"got input of shape {x.shape}")
        b, t, c = x.shape
        t_out = (t - s.kernel) // s.stride + 1
        cols = self._cols(x, t_out)
        out = cols @ self._wmat() + self.params["b"]
        if train:
            self._cache = (cols, x.shape, t_out)
        return out.reshape(b, t_out, s.out_maps)

    def backward(self, g):
        s = self.spec
        cols, (b, t, c), t_out = self._cache
        g2 = g.reshape(b * t_out, s.out_maps)
        dwm = cols.T @ g2
        self.grads["w"] = np.ascontiguousarray(
            dwm.reshape(s.kernel, s.in_maps, s.out_maps).transpose(2, 1, 0))
        self.grads["b"] = g2.sum(axis=0)
        dcols = (g2 @ self._wmat().T).reshape(b, t_out, s.kernel, c)
        dx = np.zeros((b, t, c), dtype=g.dtype)
        stop = s.stride * (t_out - 1) + 1
        for k in range(s.kernel):
            dx[:, k:k + stop:s.stride] += dcols[:, :, k]
        self._cache = None
        return dx


class MaxPoolLayer(Layer):
    def output_shape(self, shape):
        if len(shape) != 2 or shape[0] < self.spec.kernel:
            raise self._bad(f"cannot pool input of shape {shape}")
        return (shape[0] // self.spec.kernel, shape[1])

    def forward(self, x, train, rng=None):
        k = self.spec.kernel
        t_out = x.shape[1] // k
        best = x[:, 0:t_out * k:k].copy()
        idx = np.zeros(best.shape, dtype=np.int8)
        for j in range(1, k):
            cand = x[:, j:t_out * k:k]
            # strict comparison keeps ties at the lowest index
            better = cand > best
            best = np.where(better, cand, best)
            idx = np.where(better, np.int8(j), idx)
        self._idx = idx
        self._shape = x.shape
        return best

    def backward(self, g):
        k = self.spec.kernel
        t_out = g.shape[1]
        dx = np.zeros(self._shape, dtype=g.dtype)
        for j in range(k):
            dx[:, j:t_out * k:k] = np.where(self._idx == j, g, 0)
        return dx


class AvgPoolLayer(MaxPoolLayer):
    def forward(self, x, train, rng=None):
        k = self.spec.kernel
        b, t, c = x.shape
        t_out = t // k
        self._shape = x.shape
        return x[:, :t_out * k].reshape(b, t_out, k, c).mean(axis=2)

    def backward(self, g):
        k = self.spec.kernel
        b, t, c = self._shape
        t_out = g.shape[1]
        dx = np.zeros(self._shape, dtype=g.dtype)
        dx[:, :t_out * k] = np.repeat(g / k, k, axis=1)
        return dx


class BatchNormLayer(Layer):
    def output_shape(self, shape):
        if shape[-1] != self.spec.features:
            raise self._bad(f"expects {self.spec.features} features, got {shape}")
        return shape

    def init(self, rng, dtype, xavier=False):
        f = self.spec.features
        self.params["gamma"] = np.ones(f, dtype)
        self.params["beta"] = np.zeros(f, dtype)
        self.buffers["running_mean"] = np.zeros(f, dtype)
        self.buffers["running_var"] = np.ones(f, dtype)

    def forward(self, x, train, rng=None):
        axes = tuple(range(x.ndim - 1))
        eps = self.spec.eps
        if train:
            mu = x.mean(axis=axes)
            xc = x - mu
            var = (xc * xc).mean(axis=axes)
            inv = 1.0 / np.sqrt(var + eps)
            xhat = xc * inv
            n = x.size // x.shape[-1]
            m = self.spec.momentum
            rm, rv = self.buffers["running_mean"], self.buffers["running_var"]
            rm *= 1 - m
            rm += m * mu
            rv *= 1 - m
            rv += m * var * (n / max(n - 1, 1))
            self._cache = (xhat, inv, axes, n)
            self.last_normalized = xhat
        else:
            xhat = (x - self.buffers["running_mean"]) / np.sqrt(self.buffers["running_var"] + eps)
        return xhat * self.params["gamma"] + self.params["beta"]

    def backward(self, g):
        xhat, inv, axes, n = self._cache
        self.grads["gamma"] = (g * xhat).sum(axis=axes)
        self.grads["beta"] = g.sum(axis=axes)
        dxhat = g * self.params["gamma"]
        return (inv / n) * (n * dxhat - dxhat.sum(axis=axes) - xhat * (dxhat * xhat).sum(axis=axes))


class DropoutLayer(Layer):
    def forward(self, x, train, rng=None):
        p = self.spec.p
        if not train or p == 0:
            self._mask = None
            return x
        keep = (rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)
        self._mask = keep
        return x * keep

    def backward(self, g):
        return g if self._mask is None else g * self._mask


class ActivationLayer(Layer):
    def __init__(self, spec, index):
        super().__init__(spec, index)
        if spec.kind not in ("relu", "sigmoid"):
            raise ShapeError(f"layer {index}: unknown activation {spec.kind!r}")

    def forward(self, x, train, rng=None):
        if self.spec.kind == "relu":
            self._mask = x > 0
            return x * self._mask
        y = sigmoid(x)
        self._y = y
        return y

    def backward(self, g):
        if self.spec.kind == "relu":
            return g * self._mask
        return g * self._y * (1.0 - self._y)


class FlattenLayer(Layer):
    def output_shape(self, shape):
        return (int(np.prod(shape)),)

    def forward(self, x, train, rng=None):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, g):
        return g.reshape(self._shape)


def sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


IMPLEMENTATIONS = {
    Dense: DenseLayer, Conv1D: Conv1DLayer, MaxPool1D: MaxPoolLayer, AvgPool1D: AvgPoolLayer,
    BatchNorm: BatchNormLayer, Dropout: DropoutLayer, Activation: ActivationLayer,
    Flatten: FlattenLayer,
}


def make_layer(spec, index: int) -> Layer:
    try:
        cls = IMPLEMENTATIONS[type(spec)]
    except KeyError:
        raise ShapeError(f"layer {index}: unsupported spec {spec!r}") from None
    return cls(spec, index)
