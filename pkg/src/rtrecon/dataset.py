"""Training pairs and the range normalization used around the network."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class TrainingPair:
    input: np.ndarray      # [C, H, W] real, one channel per virtual coil
    reference: np.ndarray  # [H, W] real
    source: int = 0        # index of the slice this pair was derived from

    def __post_init__(self):
        x = np.asarray(self.input, dtype=float)
        y = np.asarray(self.reference, dtype=float)
        if x.ndim == 2:
            x = x[None]
        if x.ndim != 3 or y.shape != x.shape[1:]:
            raise ValidationError(f"pair shapes disagree: input {x.shape}, reference {y.shape}")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ValidationError("training pair has non-finite values")
        object.__setattr__(self, "input", x)
        object.__setattr__(self, "reference", y)


@dataclass(frozen=True)
class RangeScale:
    lo: np.ndarray  # per channel
    hi: np.ndarray

    @property
    def width(self) -> np.ndarray:
        w = self.hi - self.lo
        return np.where(w > 0, w, 1.0)


def range_scale(x: np.ndarray) -> RangeScale:
    """Per-channel (leading axis) min/max of a [C, H, W] or [H, W] array."""
    x = np.asarray(x, dtype=float)
    flat = x.reshape(1, -1) if x.ndim == 2 else x.reshape(x.shape[0], -1)
    return RangeScale(flat.min(axis=1), flat.max(axis=1))


def normalize(x: np.ndarray, scale: RangeScale | None = None) -> tuple[np.ndarray, RangeScale]:
    """Map each channel to [0, 1]; constant channels map to 0."""
    x = np.asarray(x, dtype=float)
    scale = range_scale(x) if scale is None else scale
    shape = (-1, 1, 1) if x.ndim == 3 else (1, 1)
    lo = scale.lo.reshape(shape) if x.ndim == 3 else scale.lo[0]
    w = scale.width.reshape(shape) if x.ndim == 3 else scale.width[0]
    return (x - lo) / w, scale


def denormalize(x: np.ndarray, scale: RangeScale) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 3:
        return x * scale.width[:, None, None] + scale.lo[:, None, None]
    return x * scale.width[0] + scale.lo[0]


def stack_pairs(pairs: list[TrainingPair]) -> tuple[np.ndarray, np.ndarray, list, list]:
    """Normalize every pair; returns (inputs [N,C,H,W], refs [N,H,W], input scales, ref scales)."""
    if not pairs:
        raise ValidationError("dataset is empty")
    shape = pairs[0].input.shape
    xs, ys, sx, sy = [], [], [], []
    for p in pairs:
        if p.input.shape != shape:
            raise ValidationError(f"inconsistent pair shapes {p.input.shape} vs {shape}")
        xn, a = normalize(p.input)
        yn, b = normalize(p.reference)
        xs.append(xn)
        ys.append(yn)
        sx.append(a)
        sy.append(b)
    return np.stack(xs), np.stack(ys), sx, sy
