"""U-shaped residual enhancer.

Encoder: ``depth`` conv blocks, filters ``base * 2**level``, 2x2 max pool
between levels. The bottleneck block is followed by a residual unit
(identity + conv block). Decoder: nearest 2x upsample, 3x3 conv down to the
skip width, concatenate [skip, up], conv block. A 1x1 conv maps to one
linear output channel. With ``input_shortcut`` a second 1x1 conv maps the
raw input straight to the output and is added, so the body learns a
correction on top of a per-channel linear blend of the inputs.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..errors import ValidationError
from .layers import Conv2d, ConvBlock, Layer, MaxPool2, Residual, Upsample2


@dataclass(frozen=True)
class NetworkConfig:
    depth: int = 3
    base_filters: int = 8
    dropout_rate: float = 0.05
    input_channels: int = 2
    input_shortcut: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.depth < 1:
            raise ValidationError(f"depth must be >= 1, got {self.depth}")
        if self.base_filters < 1 or self.input_channels < 1:
            raise ValidationError("base_filters and input_channels must be >= 1")
        if not 0 <= self.dropout_rate < 1:
            raise ValidationError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")

    @property
    def kernel(self) -> int:
        return 3

    def filters(self, level: int) -> int:
        return self.base_filters * 2 ** level

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        return cls(depth=int(d["depth"]), base_filters=int(d["base_filters"]),
                   dropout_rate=float(d["dropout_rate"]),
                   input_channels=int(d["input_channels"]),
                   input_shortcut=str(d.get("input_shortcut", True)).lower() in ("1", "true"),
                   seed=int(d.get("seed", 0)))


FULL_SCALE = NetworkConfig(depth=5, base_filters=32, dropout_rate=0.05, input_channels=2)


def _drop_streams(seed: int):
    # one independent generator per dropout layer, in construction order
    ss = np.random.SeedSequence([int(seed), 0xD20F])
    while True:
        yield np.random.Generator(np.random.PCG64(ss.spawn(1)[0]))


class UNet(Layer):
    def __init__(self, config: NetworkConfig, dtype=np.float64):
        super().__init__()
        self.config = config
        self.dtype = np.dtype(dtype)
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(config.seed), 0x1417])))
        drops = _drop_streams(config.seed)
        rate = config.dropout_rate
        d = config.depth
        self.encoders = []
        c_in = config.input_channels
        for level in range(d):
            self.encoders.append(ConvBlock(c_in, config.filters(level), rate, rng, drops, dtype))
            c_in = config.filters(level)
        self.bottleneck = Residual(ConvBlock(c_in, c_in, rate, rng, drops, dtype))
        self.up_convs, self.decoders = [], []
        for level in range(d - 2, -1, -1):
            f = config.filters(level)
            self.up_convs.append(Conv2d(config.filters(level + 1), f, 3, rng, dtype))
            self.decoders.append(ConvBlock(2 * f, f, rate, rng, drops, dtype))
        self.head = Conv2d(config.base_filters, 1, 1, rng, dtype)
        if config.input_shortcut:
            # zero head: the untrained net is the input shortcut and the body learns a correction
            self.head.params["weight"][:] = 0
        self.shortcut = None
        if config.input_shortcut:
            self.shortcut = Conv2d(config.input_channels, 1, 1, rng, dtype)
            # channel mean as the starting blend
            self.shortcut.params["weight"][:] = 1.0 / config.input_channels
        self.pools = [MaxPool2() for _ in range(d - 1)]
        self.ups = [Upsample2() for _ in range(d - 1)]

    def children(self):
        out = [(f"enc{i}", b) for i, b in enumerate(self.encoders)]
        out.append(("bottleneck", self.bottleneck))
        out += [(f"upconv{i}", c) for i, c in enumerate(self.up_convs)]
        out += [(f"dec{i}", b) for i, b in enumerate(self.decoders)]
        out.append(("head", self.head))
        if self.shortcut is not None:
            out.append(("shortcut", self.shortcut))
        return out

    def check_input(self, x: np.ndarray) -> np.ndarray:
        if x.ndim == 3:
            x = x[None]
        if x.ndim != 4 or x.shape[1] != self.config.input_channels:
            raise ValidationError(
                f"expected [N, {self.config.input_channels}, H, W] input, got {x.shape}")
        f = 2 ** (self.config.depth - 1)
        if x.shape[2] % f or x.shape[3] % f:
            raise ValidationError(
                f"spatial dims {x.shape[2:]} not divisible by 2^(depth-1) = {f}")
        if not np.all(np.isfinite(x)):
            raise ValidationError("network input has non-finite values")
        return x.astype(self.dtype, copy=False)

    def forward(self, x):
        x = self.check_input(x)
        inp = x
        skips = []
        for level, enc in enumerate(self.encoders):
            x = enc.forward(x)
            if level < len(self.pools):
                skips.append(x)
                x = self.pools[level].forward(x)
        x = self.bottleneck.forward(x)
        self._split = []
        for i, (up, conv, dec) in enumerate(zip(self.ups, self.up_convs, self.decoders)):
            skip = skips.pop()
            x = conv.forward(up.forward(x))
            self._split.append(skip.shape[1])
            x = dec.forward(np.concatenate([skip, x], axis=1))
        y = self.head.forward(x)
        if self.shortcut is not None:
            y = y + self.shortcut.forward(inp)
        return y

    def backward(self, dy):
        dy = np.asarray(dy, dtype=self.dtype)
        if dy.ndim == 3:
            dy = dy[:, None]
        dx_in = self.shortcut.backward(dy) if self.shortcut is not None else 0
        g = self.head.backward(dy)
        dskips = []
        for i in range(len(self.decoders) - 1, -1, -1):
            g = self.decoders[i].backward(g)
            c = self._split[i]
            dskips.append(g[:, :c])
            g = self.ups[i].backward(self.up_convs[i].backward(g[:, c:]))
        g = self.bottleneck.backward(g)
        # decoders run deep -> shallow, so dskips was filled shallow-first
        for level in range(len(self.encoders) - 1, -1, -1):
            if level < len(self.pools):
                g = self.pools[level].backward(g) + dskips[level]
            g = self.encoders[level].backward(g)
        return g + dx_in

    def predict(self, x: np.ndarray, batch_size: int = 8) -> np.ndarray:
        """Eval-mode forward; returns [N, H, W]."""
        was = self.training
        self.set_training(False)
        try:
            x = self.check_input(x)
            out = [self.forward(x[i:i + batch_size])[:, 0] for i in range(0, len(x), batch_size)]
        finally:
            self.set_training(was)
        return np.concatenate(out, axis=0)

    def parameters(self) -> dict[str, np.ndarray]:
        return dict(self.named_parameters())

    def gradients(self) -> dict[str, np.ndarray]:
        return dict(self.named_grads())

    def buffer_state(self) -> dict[str, np.ndarray]:
        return dict(self.named_buffers())

    def state(self) -> dict[str, np.ndarray]:
        s = self.parameters()
        s.update(self.buffer_state())
        return s

    def load_state(self, state: dict[str, np.ndarray]):
        own = self.state()
        missing = set(own) - set(state)
        extra = set(state) - set(own)
        if missing or extra:
            raise ValidationError(f"state mismatch: missing {sorted(missing)[:3]}, "
                                  f"unexpected {sorted(extra)[:3]}")
        for k, v in own.items():
            if v.shape != np.shape(state[k]):
                raise ValidationError(f"{k}: shape {np.shape(state[k])} != {v.shape}")
            v[...] = state[k]

    def n_parameters(self) -> int:
        return sum(v.size for v in self.parameters().values())


def parameter_count(config: NetworkConfig) -> int:
    """Closed-form trainable parameter count (running statistics excluded)."""
    def conv(ci, co, k):
        return ci * co * k * k + co

    def block(ci, co):
        return conv(ci, co, 3) + conv(co, co, 3) + 2 * 3 * co

    total = 0
    c_in = config.input_channels
    for level in range(config.depth):
        total += block(c_in, config.filters(level))
        c_in = config.filters(level)
    total += block(c_in, c_in)
    for level in range(config.depth - 2, -1, -1):
        f = config.filters(level)
        total += conv(config.filters(level + 1), f, 3) + block(2 * f, f)
    total += conv(config.base_filters, 1, 1)
    if config.input_shortcut:
        total += conv(config.input_channels, 1, 1)
    return total
