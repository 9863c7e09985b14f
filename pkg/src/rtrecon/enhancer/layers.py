"""Numpy layers with explicit backward passes.

Tensors are ``[batch, channel, row, col]``. Every layer caches what its
backward pass needs during ``forward`` and accumulates parameter gradients
into ``self.grads`` (same keys as ``self.params``). Computation runs in the
dtype of the parameters; gradient checks use float64.
"""
from __future__ import annotations

import numpy as np

from ..errors import ValidationError

BN_EPS = 1e-5
BN_MOMENTUM = 0.1
PRELU_INIT = 0.25


def conv2d(x: np.ndarray, w: np.ndarray, b: np.ndarray | None = None) -> np.ndarray:
    """Same-padded (zero) cross-correlation with an odd square kernel."""
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ValidationError(f"conv2d shape mismatch: input {x.shape}, weights {w.shape}")
    n, _, h, wd = x.shape
    k = w.shape[2]
    p = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
    y = np.zeros((w.shape[0], n, h, wd), dtype=np.result_type(x, w))
    for i in range(k):
        for j in range(k):
            y += np.tensordot(w[:, :, i, j], xp[:, :, i:i + h, j:j + wd], axes=(1, 1))
    y = y.transpose(1, 0, 2, 3)
    if b is not None:
        y = y + b[None, :, None, None]
    return y


def conv2d_backward(dy: np.ndarray, x: np.ndarray, w: np.ndarray):
    """Gradients (dx, dw, db) of :func:`conv2d`."""
    _, _, h, wd = x.shape
    k = w.shape[2]
    p = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
    dxp = np.zeros_like(xp)
    dw = np.empty_like(w)
    for i in range(k):
        for j in range(k):
            window = xp[:, :, i:i + h, j:j + wd]
            dw[:, :, i, j] = np.tensordot(dy, window, axes=([0, 2, 3], [0, 2, 3]))
            dxp[:, :, i:i + h, j:j + wd] += np.tensordot(
                w[:, :, i, j], dy, axes=(0, 1)).transpose(1, 0, 2, 3)
    dx = dxp[:, :, p:p + h, p:p + wd] if p else dxp
    return dx, dw, dy.sum(axis=(0, 2, 3))


class Layer:
    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.training = True

    def forward(self, x):
        raise NotImplementedError

    def backward(self, dy):
        raise NotImplementedError

    def zero_grad(self):
        for k, v in self.params.items():
            self.grads[k] = np.zeros_like(v)

    def children(self) -> list[tuple[str, "Layer"]]:
        return []

    def named_parameters(self, prefix: str = ""):
        for k, v in self.params.items():
            yield prefix + k, v
        for name, child in self.children():
            yield from child.named_parameters(f"{prefix}{name}.")

    def named_grads(self, prefix: str = ""):
        for k in self.params:
            yield prefix + k, self.grads[k]
        for name, child in self.children():
            yield from child.named_grads(f"{prefix}{name}.")

    def named_buffers(self, prefix: str = ""):
        for k, v in getattr(self, "buffers", {}).items():
            yield prefix + k, v
        for name, child in self.children():
            yield from child.named_buffers(f"{prefix}{name}.")

    def zero_grad_all(self):
        self.zero_grad()
        for _, child in self.children():
            child.zero_grad_all()

    def set_training(self, flag: bool):
        self.training = flag
        for _, child in self.children():
            child.set_training(flag)


class Conv2d(Layer):
    def __init__(self, c_in: int, c_out: int, kernel: int, rng: np.random.Generator,
                 dtype=np.float64, scale: float = 1.0):
        super().__init__()
        fan_in = c_in * kernel * kernel
        w = rng.standard_normal((c_out, c_in, kernel, kernel)) * np.sqrt(2.0 / fan_in) * scale
        self.params = {"weight": w.astype(dtype), "bias": np.zeros(c_out, dtype=dtype)}
        self.zero_grad()

    def forward(self, x):
        self._x = x
        return conv2d(x, self.params["weight"], self.params["bias"])

    def backward(self, dy):
        dx, dw, db = conv2d_backward(dy, self._x, self.params["weight"])
        self.grads["weight"] += dw
        self.grads["bias"] += db
        return dx


class BatchNorm2d(Layer):
    def __init__(self, channels: int, dtype=np.float64):
        super().__init__()
        self.params = {"gamma": np.ones(channels, dtype=dtype),
                       "beta": np.zeros(channels, dtype=dtype)}
        self.buffers = {"running_mean": np.zeros(channels, dtype=dtype),
                        "running_var": np.ones(channels, dtype=dtype)}
        self.zero_grad()

    def forward(self, x):
        g, b = self.params["gamma"], self.params["beta"]
        if self.training:
            if x.shape[0] < 2:
                raise ValidationError("batch normalization in train mode needs a batch of >= 2")
            mean = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
            m = x.shape[0] * x.shape[2] * x.shape[3]
            rm, rv = self.buffers["running_mean"], self.buffers["running_var"]
            rm *= 1 - BN_MOMENTUM
            rm += BN_MOMENTUM * mean
            rv *= 1 - BN_MOMENTUM
            rv += BN_MOMENTUM * var * m / (m - 1)
        else:
            mean, var = self.buffers["running_mean"], self.buffers["running_var"]
        inv = 1.0 / np.sqrt(var + BN_EPS)
        xhat = (x - mean[None, :, None, None]) * inv[None, :, None, None]
        self._cache = (xhat, inv)
        return g[None, :, None, None] * xhat + b[None, :, None, None]

    def backward(self, dy):
        xhat, inv = self._cache
        g = self.params["gamma"]
        self.grads["gamma"] += np.sum(dy * xhat, axis=(0, 2, 3))
        self.grads["beta"] += dy.sum(axis=(0, 2, 3))
        dxhat = dy * g[None, :, None, None]
        if not self.training:
            return dxhat * inv[None, :, None, None]
        mean_d = dxhat.mean(axis=(0, 2, 3), keepdims=True)
        mean_dx = np.mean(dxhat * xhat, axis=(0, 2, 3), keepdims=True)
        return (dxhat - mean_d - xhat * mean_dx) * inv[None, :, None, None]


class PReLU(Layer):
    def __init__(self, channels: int, dtype=np.float64):
        super().__init__()
        self.params = {"slope": np.full(channels, PRELU_INIT, dtype=dtype)}
        self.zero_grad()

    def forward(self, x):
        self._x = x
        a = self.params["slope"][None, :, None, None]
        return np.where(x > 0, x, a * x)

    def backward(self, dy):
        x = self._x
        neg = x <= 0
        self.grads["slope"] += np.sum(np.where(neg, x * dy, 0), axis=(0, 2, 3))
        a = self.params["slope"][None, :, None, None]
        return np.where(neg, a * dy, dy)


class Dropout(Layer):
    """Inverted dropout; the mask stream comes from the generator passed in."""

    def __init__(self, rate: float, rng: np.random.Generator):
        super().__init__()
        if not 0 <= rate < 1:
            raise ValidationError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        self.rng = rng

    def forward(self, x):
        if not self.training or self.rate == 0:
            self._mask = None
            return x
        keep = 1.0 - self.rate
        self._mask = (self.rng.random(x.shape) < keep).astype(x.dtype) / keep
        return x * self._mask

    def backward(self, dy):
        return dy if self._mask is None else dy * self._mask


class NormActDrop(Layer):
    """Batch normalization, parametric rectifier, dropout."""

    def __init__(self, channels: int, rate: float, rng: np.random.Generator, dtype=np.float64):
        super().__init__()
        self.bn = BatchNorm2d(channels, dtype)
        self.act = PReLU(channels, dtype)
        self.drop = Dropout(rate, rng)

    def children(self):
        return [("bn", self.bn), ("act", self.act), ("drop", self.drop)]

    def forward(self, x):
        return self.drop.forward(self.act.forward(self.bn.forward(x)))

    def backward(self, dy):
        return self.bn.backward(self.act.backward(self.drop.backward(dy)))


class MaxPool2(Layer):
    """2x2 max pool, stride 2; ties route the gradient to the first maximum."""

    def forward(self, x):
        n, c, h, w = x.shape
        if h % 2 or w % 2:
            raise ValidationError(f"max pool needs even spatial dims, got {h}x{w}")
        blocks = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
        blocks = blocks.reshape(n, c, h // 2, w // 2, 4)
        idx = blocks.argmax(axis=-1)
        self._shape = x.shape
        self._idx = idx
        return np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]

    def backward(self, dy):
        n, c, h, w = self._shape
        onehot = np.zeros(dy.shape + (4,), dtype=dy.dtype)
        np.put_along_axis(onehot, self._idx[..., None], dy[..., None], axis=-1)
        out = onehot.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
        return out.reshape(n, c, h, w)


class Upsample2(Layer):
    """Nearest-neighbour 2x upsampling."""

    def forward(self, x):
        return x.repeat(2, axis=2).repeat(2, axis=3)

    def backward(self, dy):
        n, c, h, w = dy.shape
        return dy.reshape(n, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5))


class AvgPool2(Layer):
    """2x2 average pool, stride 2; odd trailing rows/cols are dropped."""

    def forward(self, x):
        n, c, h, w = x.shape
        self._shape = x.shape
        h2, w2 = h // 2, w // 2
        v = x[:, :, :2 * h2, :2 * w2].reshape(n, c, h2, 2, w2, 2)
        return v.mean(axis=(3, 5))

    def backward(self, dy):
        n, c, h, w = self._shape
        dx = np.zeros((n, c, h, w), dtype=dy.dtype)
        up = dy.repeat(2, axis=2).repeat(2, axis=3) / 4.0
        dx[:, :, :up.shape[2], :up.shape[3]] = up
        return dx


class ReLU(Layer):
    def forward(self, x):
        self._pos = x > 0
        return np.where(self._pos, x, 0)

    def backward(self, dy):
        return np.where(self._pos, dy, 0)


class ConvBlock(Layer):
    """Two 3x3 convolutions, each followed by norm/activation/dropout."""

    def __init__(self, c_in: int, c_out: int, rate: float, rng: np.random.Generator,
                 drop_rngs, dtype=np.float64):
        super().__init__()
        self.conv1 = Conv2d(c_in, c_out, 3, rng, dtype)
        self.nad1 = NormActDrop(c_out, rate, next(drop_rngs), dtype)
        self.conv2 = Conv2d(c_out, c_out, 3, rng, dtype)
        self.nad2 = NormActDrop(c_out, rate, next(drop_rngs), dtype)

    def children(self):
        return [("conv1", self.conv1), ("nad1", self.nad1),
                ("conv2", self.conv2), ("nad2", self.nad2)]

    def forward(self, x):
        x = self.nad1.forward(self.conv1.forward(x))
        return self.nad2.forward(self.conv2.forward(x))

    def backward(self, dy):
        dy = self.conv2.backward(self.nad2.backward(dy))
        return self.conv1.backward(self.nad1.backward(dy))


class Residual(Layer):
    """x + block(x) with an identity shortcut."""

    def __init__(self, block: Layer):
        super().__init__()
        self.block = block

    def children(self):
        return [("block", self.block)]

    def forward(self, x):
        return x + self.block.forward(x)

    def backward(self, dy):
        return dy + self.block.backward(dy)
