"""Multi-coil complex grids, centered orthonormal FFTs and RSS coil combination.

Arrays are indexed ``[coil, row, col]``. ``line_axis`` names the spatial axis
(0 = rows, 1 = cols) along which phase-encode lines are indexed; a mask
entry ``i`` therefore selects ``data[:, :, i]`` when ``line_axis == 1``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericError, ValidationError

MIN_EXTENT = 8


def _check_stack(data: np.ndarray, line_axis: int) -> np.ndarray:
    data = np.asarray(data)
    if data.ndim != 3:
        raise ValidationError(f"expected [coil, row, col] array, got shape {data.shape}")
    if data.shape[0] < 1:
        raise ValidationError("need at least one coil")
    if min(data.shape[1:]) < MIN_EXTENT:
        raise ValidationError(f"spatial extent must be >= {MIN_EXTENT}, got {data.shape[1:]}")
    if line_axis not in (0, 1):
        raise ValidationError(f"line_axis must be 0 or 1, got {line_axis}")
    if not np.all(np.isfinite(data)):
        raise NumericError("grid contains non-finite samples")
    return data


@dataclass(frozen=True)
class KSpaceGrid:
    data: np.ndarray
    line_axis: int = 1

    def __post_init__(self):
        object.__setattr__(self, "data", _check_stack(self.data, self.line_axis))

    @property
    def n_coils(self) -> int:
        return self.data.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape[1:]

    @property
    def n_lines(self) -> int:
        return self.data.shape[1 + self.line_axis]

    def with_data(self, data: np.ndarray) -> "KSpaceGrid":
        return KSpaceGrid(data, self.line_axis)


@dataclass(frozen=True)
class CoilImageStack:
    data: np.ndarray
    line_axis: int = 1

    def __post_init__(self):
        object.__setattr__(self, "data", _check_stack(self.data, self.line_axis))

    @property
    def n_coils(self) -> int:
        return self.data.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape[1:]


def fft2c(x: np.ndarray) -> np.ndarray:
    """Centered orthonormal 2-D FFT over the last two axes."""
    x = np.fft.ifftshift(x, axes=(-2, -1))
    x = np.fft.fft2(x, norm="ortho")
    return np.fft.fftshift(x, axes=(-2, -1))


def ifft2c(k: np.ndarray) -> np.ndarray:
    """Inverse of :func:`fft2c`."""
    k = np.fft.ifftshift(k, axes=(-2, -1))
    k = np.fft.ifft2(k, norm="ortho")
    return np.fft.fftshift(k, axes=(-2, -1))


def fft2(image: CoilImageStack) -> KSpaceGrid:
    return KSpaceGrid(fft2c(image.data), image.line_axis)


def ifft2(kspace: KSpaceGrid) -> CoilImageStack:
    return CoilImageStack(ifft2c(kspace.data), kspace.line_axis)


def rss(data: np.ndarray, axis: int = 0) -> np.ndarray:
    """Root sum of squares over ``axis`` for a raw array."""
    data = np.asarray(data)
    if data.shape[axis] == 0:
        raise ValidationError("cannot combine an empty coil stack")
    return np.sqrt(np.sum(np.abs(data) ** 2, axis=axis))


def rss_combine(images: CoilImageStack | np.ndarray) -> np.ndarray:
    """Per-pixel sqrt(sum over coils of |value|^2); returns a real [row, col] image."""
    data = images.data if isinstance(images, CoilImageStack) else np.asarray(images)
    if data.ndim != 3 or data.shape[0] == 0:
        raise ValidationError("rss_combine needs a non-empty [coil, row, col] stack")
    return rss(data, axis=0)


def check_image(image: np.ndarray, nonnegative: bool = False) -> np.ndarray:
    image = np.asarray(image)
    if image.ndim != 2:
        raise ValidationError(f"expected a [row, col] image, got shape {image.shape}")
    if not np.all(np.isfinite(image)):
        raise NumericError("image contains non-finite values")
    if nonnegative and np.any(image < 0):
        raise ValidationError("magnitude image has negative values")
    return image
