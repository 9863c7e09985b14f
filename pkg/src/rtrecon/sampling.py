"""Cartesian line masks: the non-uniform 8:4:2:1 4x mask and the conventional baseline.

All rate * n_lines products are rounded half-up using exact rational
arithmetic so counts never depend on float representation of the rates.

Random draws use numpy's PCG64 seeded with the mask seed. Draw order for the
non-uniform mask: left half sections proximal -> distal, then right half
sections proximal -> distal, one ``Generator.choice(..., replace=False)`` per
section.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import SizingError, ValidationError
from .grid import KSpaceGrid

NONUNIFORM = "nonuniform_8421"
CONVENTIONAL = "conventional_uniform"
PROFILES = (NONUNIFORM, CONVENTIONAL)

CENTER_FRACTION = Fraction(1, 10)
SECTION_RATES = (Fraction(4, 100), Fraction(2, 100), Fraction(1, 100), Fraction(5, 1000))
CONVENTIONAL_PERIPHERAL_RATE = Fraction("0.1667")
N_SECTIONS = 4


def round_half_up(x: Fraction) -> int:
    return math.floor(Fraction(x) + Fraction(1, 2))


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed) & 0xFFFFFFFFFFFFFFFF))


@dataclass(frozen=True)
class SamplingMask:
    lines: np.ndarray
    seed: int = 0
    profile: str = NONUNIFORM

    def __post_init__(self):
        lines = np.asarray(self.lines, dtype=bool)
        if lines.ndim != 1 or lines.size == 0:
            raise ValidationError("mask lines must be a non-empty 1-D vector")
        if self.profile not in PROFILES and self.profile != "custom":
            raise ValidationError(f"unknown mask profile {self.profile!r}")
        lines = lines.copy()
        lines.setflags(write=False)
        object.__setattr__(self, "lines", lines)

    @property
    def n_lines(self) -> int:
        return self.lines.size

    @property
    def acquired(self) -> int:
        return int(self.lines.sum())

    def __eq__(self, other):
        if not isinstance(other, SamplingMask):
            return NotImplemented
        return (self.profile == other.profile and self.seed == other.seed
                and np.array_equal(self.lines, other.lines))

    def __hash__(self):
        return hash((self.profile, self.seed, self.lines.tobytes()))


@dataclass(frozen=True)
class MaskLayout:
    """Index bookkeeping for a mask: center block and per-side sections."""

    n_lines: int
    center: tuple[int, int]
    left_sections: list[np.ndarray] = field(default_factory=list)
    right_sections: list[np.ndarray] = field(default_factory=list)


def center_block(n_lines: int) -> tuple[int, int]:
    c = round_half_up(CENTER_FRACTION * n_lines)
    start = (n_lines - c) // 2
    return start, start + c


def _split_sections(indices: np.ndarray, n_sections: int) -> list[np.ndarray]:
    # equal contiguous sections; remainder goes to the first (proximal) ones
    base, extra = divmod(indices.size, n_sections)
    sizes = [base + (1 if i < extra else 0) for i in range(n_sections)]
    out, pos = [], 0
    for s in sizes:
        out.append(indices[pos:pos + s])
        pos += s
    return out


def mask_layout(n_lines: int) -> MaskLayout:
    start, stop = center_block(n_lines)
    # left half ordered proximal (next to center) -> distal (edge)
    left = np.arange(start - 1, -1, -1)
    right = np.arange(stop, n_lines)
    return MaskLayout(n_lines, (start, stop),
                      _split_sections(left, N_SECTIONS), _split_sections(right, N_SECTIONS))


def section_counts(n_lines: int) -> list[int]:
    return [round_half_up(r * n_lines) for r in SECTION_RATES]


def make_mask(n_lines: int, seed: int = 0) -> SamplingMask:
    if n_lines < 40:
        raise SizingError(f"non-uniform mask needs n_lines >= 40, got {n_lines}")
    layout = mask_layout(n_lines)
    counts = section_counts(n_lines)
    lines = np.zeros(n_lines, dtype=bool)
    lines[layout.center[0]:layout.center[1]] = True
    rng = make_rng(seed)
    for side, sections in (("left", layout.left_sections), ("right", layout.right_sections)):
        for i, (section, k) in enumerate(zip(sections, counts)):
            if k > section.size:
                raise SizingError(
                    f"{side} section {i} has {section.size} lines, {k} requested")
            if k:
                lines[rng.choice(section, size=k, replace=False)] = True
    return SamplingMask(lines, seed, NONUNIFORM)


def make_conventional_mask(n_lines: int, seed: int = 0) -> SamplingMask:
    if n_lines < 20:
        raise SizingError(f"conventional mask needs n_lines >= 20, got {n_lines}")
    start, stop = center_block(n_lines)
    lines = np.zeros(n_lines, dtype=bool)
    lines[start:stop] = True
    peripheral = np.concatenate([np.arange(start), np.arange(stop, n_lines)])
    k = round_half_up(CONVENTIONAL_PERIPHERAL_RATE * peripheral.size)
    if k > peripheral.size:
        raise SizingError(f"{peripheral.size} peripheral lines, {k} requested")
    rng = make_rng(seed)
    lines[rng.choice(peripheral, size=k, replace=False)] = True
    return SamplingMask(lines, seed, CONVENTIONAL)


def full_mask(n_lines: int) -> SamplingMask:
    return SamplingMask(np.ones(n_lines, dtype=bool), 0, "custom")


def _line_view(kspace: KSpaceGrid, lines: np.ndarray) -> tuple:
    sel = [slice(None)] * 3
    sel[1 + kspace.line_axis] = lines
    return tuple(sel)


def apply_mask(kspace: KSpaceGrid, mask: SamplingMask) -> KSpaceGrid:
    """Zero every line the mask does not acquire, across all coils."""
    if mask.n_lines != kspace.n_lines:
        raise ValidationError(
            f"mask has {mask.n_lines} lines, k-space has {kspace.n_lines} along line_axis")
    out = kspace.data.copy()
    out[_line_view(kspace, ~mask.lines)] = 0
    return kspace.with_data(out)


def mask_stats(mask: SamplingMask) -> dict:
    """Acceleration, center-block count and per-side section counts (proximal -> distal).

    Section counts are reported against the non-uniform layout for any mask
    of at least 40 lines.
    """
    lines = mask.lines
    start, stop = center_block(mask.n_lines)
    stats = {
        "n_lines": mask.n_lines,
        "acquired": mask.acquired,
        "acceleration": mask.n_lines / mask.acquired if mask.acquired else float("inf"),
        "center_count": int(lines[start:stop].sum()),
    }
    if mask.n_lines >= 8:
        layout = mask_layout(mask.n_lines)
        stats["left_section_counts"] = [int(lines[s].sum()) for s in layout.left_sections]
        stats["right_section_counts"] = [int(lines[s].sum()) for s in layout.right_sections]
        stats["peripheral_total"] = (sum(stats["left_section_counts"])
                                     + sum(stats["right_section_counts"]))
    return stats


def acs_extent(mask: SamplingMask) -> tuple[int, int]:
    """Largest contiguous acquired run containing (or nearest to) the center index."""
    lines = mask.lines
    n = mask.n_lines
    mid = n // 2
    acquired = np.flatnonzero(lines)
    if acquired.size == 0:
        raise SizingError("mask acquires no lines")
    anchor = acquired[np.argmin(np.abs(acquired - mid))]
    lo = hi = int(anchor)
    while lo > 0 and lines[lo - 1]:
        lo -= 1
    while hi < n - 1 and lines[hi + 1]:
        hi += 1
    return lo, hi + 1
