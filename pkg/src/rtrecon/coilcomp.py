"""Global SVD virtual-coil compression.

The coils x samples data matrix D is factored as U S V^H; the compression
weights are the first rows of U^H, so virtual coil i carries the i-th
largest share of the signal energy. Each column of U is rotated so its
largest-magnitude entry is real and positive (ties broken by lowest index).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .grid import KSpaceGrid


@dataclass(frozen=True)
class CompressionMatrix:
    weights: np.ndarray          # [n_virtual, n_physical]
    singular_values: np.ndarray  # all n_physical values, descending

    @property
    def n_virtual(self) -> int:
        return self.weights.shape[0]

    @property
    def n_physical(self) -> int:
        return self.weights.shape[1]

    def truncate(self, n_virtual: int) -> "CompressionMatrix":
        if not 1 <= n_virtual <= self.n_virtual:
            raise ValidationError(f"n_virtual must be in [1, {self.n_virtual}]")
        return CompressionMatrix(self.weights[:n_virtual], self.singular_values)


def _fix_phase(u: np.ndarray) -> np.ndarray:
    idx = np.argmax(np.abs(u), axis=0)
    pivot = u[idx, np.arange(u.shape[1])]
    phase = np.where(np.abs(pivot) > 0, pivot / np.abs(pivot), 1.0)
    return u / phase[None, :]


def fit_compression(kspace: KSpaceGrid | np.ndarray, n_virtual: int) -> CompressionMatrix:
    data = kspace.data if isinstance(kspace, KSpaceGrid) else np.asarray(kspace)
    n_coils = data.shape[0]
    if not 1 <= n_virtual <= n_coils:
        raise ValidationError(f"n_virtual must be in [1, {n_coils}], got {n_virtual}")
    D = data.reshape(n_coils, -1).astype(complex, copy=False)
    u, s, _ = np.linalg.svd(D, full_matrices=False)
    u = _fix_phase(u)
    return CompressionMatrix(u[:, :n_virtual].conj().T, s)


def compress_array(data: np.ndarray, m: CompressionMatrix) -> np.ndarray:
    if data.shape[0] != m.n_physical:
        raise ValidationError(f"matrix expects {m.n_physical} coils, data has {data.shape[0]}")
    return np.tensordot(m.weights, data, axes=(1, 0))


def apply_compression(kspace: KSpaceGrid, m: CompressionMatrix) -> KSpaceGrid:
    return kspace.with_data(compress_array(kspace.data, m))


def energy_profile(m: CompressionMatrix) -> np.ndarray:
    """Cumulative fraction of squared singular values, one entry per physical coil."""
    e = m.singular_values.astype(float) ** 2
    total = e.sum()
    if total == 0:
        return np.ones_like(e)
    return np.cumsum(e) / total


def retained_energy(m: CompressionMatrix) -> float:
    return float(energy_profile(m)[m.n_virtual - 1])
