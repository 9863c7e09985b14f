"""GRAPPA calibration and fill for non-uniform Cartesian line masks.

Kernels are keyed on the source-line offsets relative to the missing target
line, so the standard two-sided kernel for a missing line with nearest
acquired lines ``gap_up`` above and ``gap_down`` below has offsets
``(-gap_up, +gap_down)``.

Every kernel must fit inside the ACS block to be calibratable, which the
wide distal gaps of the non-uniform mask do not. Fill therefore runs in passes:

1. two-sided kernels from the nearest acquired lines, where the span fits;
2. one-sided kernels from the two nearest acquired lines on the closer side,
   where that span fits (boundary lines, wide gaps);
3. optionally a cascade for what is left: each pass fills lines next to
   already known lines with (-2, -1), (1, 2) or (-1, 1) kernels. Only kernels
   that calibrate near-exactly are allowed to cascade (rank-limited data);
   on general data these lines stay zero-filled.

Readout taps wrap around the grid edge (k-space is periodic under the DFT).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GeometryError, SizingError, ValidationError
from .grid import KSpaceGrid
from .sampling import SamplingMask, acs_extent


@dataclass(frozen=True, order=True)
class KernelGeometry:
    offsets: tuple[int, ...]
    kx_taps: int = 5

    def __post_init__(self):
        offs = tuple(sorted(int(o) for o in self.offsets))
        if not offs or 0 in offs or len(set(offs)) != len(offs):
            raise ValidationError(f"invalid source offsets {self.offsets}")
        if self.kx_taps < 1 or self.kx_taps % 2 == 0:
            raise ValidationError(f"kx_taps must be odd and positive, got {self.kx_taps}")
        object.__setattr__(self, "offsets", offs)

    @classmethod
    def two_sided(cls, gap_up: int, gap_down: int, kx_taps: int = 5) -> "KernelGeometry":
        if gap_up < 1 or gap_down < 1:
            raise ValidationError("gaps must be >= 1")
        return cls((-gap_up, gap_down), kx_taps)

    @property
    def gap_up(self) -> int | None:
        neg = [o for o in self.offsets if o < 0]
        return -max(neg) if neg else None

    @property
    def gap_down(self) -> int | None:
        pos = [o for o in self.offsets if o > 0]
        return min(pos) if pos else None

    @property
    def gaps(self) -> tuple[int | None, int | None]:
        return self.gap_up, self.gap_down

    @property
    def n_source_lines(self) -> int:
        return len(self.offsets)

    @property
    def span(self) -> int:
        return max(self.offsets + (0,)) - min(self.offsets + (0,)) + 1

    def __str__(self):
        return f"offsets={list(self.offsets)} kx_taps={self.kx_taps}"


@dataclass(frozen=True)
class GrappaConfig:
    kx_taps: int = 5
    n_source_lines_per_side: int = 1
    lambda_rel: float = 1e-4
    max_span: int | None = None  # None: the ACS length
    extrapolate: bool = True
    cascade_max_residual: float = 1e-4  # above the ridge-induced residual on exact data

    def __post_init__(self):
        if self.kx_taps < 1 or self.kx_taps % 2 == 0:
            raise ValidationError("kx_taps must be odd and positive")
        if self.n_source_lines_per_side < 1:
            raise ValidationError("need at least one source line per side")
        if self.lambda_rel < 0:
            raise ValidationError("lambda_rel must be nonnegative")


@dataclass
class GrappaKernelSet:
    kernels: dict[KernelGeometry, np.ndarray]
    lambda_rel: float
    acs: tuple[int, int]
    config: GrappaConfig = field(default_factory=GrappaConfig)
    residuals: dict[KernelGeometry, float] = field(default_factory=dict)

    @property
    def max_span(self) -> int:
        return self.config.max_span or (self.acs[1] - self.acs[0])


def _kernel_span(config: GrappaConfig, mask: SamplingMask) -> int:
    if config.max_span is not None:
        return config.max_span
    lo, hi = acs_extent(mask)
    return hi - lo


@dataclass(frozen=True)
class FillPlan:
    """Which missing lines get which kernel; ``unreachable`` lines stay zero-filled."""

    passes: list[dict[KernelGeometry, np.ndarray]]
    unreachable: np.ndarray
    n_direct: int = 0  # leading passes sourced from acquired lines only

    @property
    def geometries(self) -> set[KernelGeometry]:
        return {g for p in self.passes for g in p}

    def is_cascade(self, index: int) -> bool:
        return index >= self.n_direct


def plan_fill(mask: SamplingMask, config: GrappaConfig = GrappaConfig(),
              max_span: int | None = None) -> FillPlan:
    """Assign every missing line a kernel geometry built from acquired lines only.

    Two-sided geometries (nearest ``n_source_lines_per_side`` acquired lines on
    each side) are used when their span fits the calibration region. Otherwise
    the line gets a one-sided geometry from the two nearest acquired lines on
    the closer side, if that span fits. Lines with neither stay unfilled.
    """
    lines = mask.lines
    span_cap = max_span if max_span is not None else _kernel_span(config, mask)
    acquired = np.flatnonzero(lines)
    if acquired.size < 2:
        raise SizingError("GRAPPA needs at least two acquired lines")
    k = config.n_source_lines_per_side
    taps = config.kx_taps

    two_sided: dict[KernelGeometry, list[int]] = {}
    one_sided: dict[KernelGeometry, list[int]] = {}
    unreachable = []
    for p in np.flatnonzero(~lines):
        up = acquired[acquired < p][::-1]
        down = acquired[acquired > p]
        if up.size and down.size:
            geom = KernelGeometry(tuple(np.concatenate([up[:k], down[:k]]) - p), taps)
            if geom.span <= span_cap:
                two_sided.setdefault(geom, []).append(int(p))
                continue
        candidates = []
        for side in (up, down):
            if side.size >= 2:
                g = KernelGeometry(tuple(side[:2] - p), taps)
                if g.span <= span_cap:
                    candidates.append(g)
        if candidates:
            geom = min(candidates, key=lambda g: (g.span, g.offsets))
            one_sided.setdefault(geom, []).append(int(p))
        else:
            unreachable.append(int(p))
    passes = [{g: np.array(v) for g, v in sorted(d.items())} for d in (two_sided, one_sided) if d]
    n_direct = len(passes)
    if config.extrapolate:
        known = lines.copy()
        for p in passes:
            for targets in p.values():
                known[targets] = True
        passes += _cascade(known, np.array(unreachable, dtype=int), taps)
        unreachable = []
    return FillPlan(passes, np.array(unreachable, dtype=int), n_direct)


def _cascade(known: np.ndarray, pending: np.ndarray, taps: int) -> list[dict]:
    """Grow the known set one line per side per pass with short-offset kernels."""
    n = known.size
    known = known.copy()
    passes = []
    while pending.size:
        step: dict[KernelGeometry, list[int]] = {}
        for p in pending:
            def ok(i):
                return 0 <= i < n and known[i]
            if ok(p - 1) and ok(p + 1):
                offs = (-1, 1)
            elif ok(p - 1) and ok(p - 2):
                offs = (-2, -1)
            elif ok(p + 1) and ok(p + 2):
                offs = (1, 2)
            else:
                continue
            step.setdefault(KernelGeometry(offs, taps), []).append(int(p))
        if not step:
            raise SizingError(f"cannot reach missing lines {pending.tolist()} from known data")
        done = np.concatenate([np.array(v) for v in step.values()])
        known[done] = True
        pending = np.setdiff1d(pending, done)
        passes.append({g: np.array(v) for g, v in sorted(step.items())})
    return passes


def enumerate_geometries(mask: SamplingMask, config: GrappaConfig = GrappaConfig(),
                         max_span: int | None = None) -> set[KernelGeometry]:
    return plan_fill(mask, config, max_span).geometries


def _lines_last(kspace: KSpaceGrid) -> np.ndarray:
    # [coil, readout, line]
    return kspace.data if kspace.line_axis == 1 else np.swapaxes(kspace.data, 1, 2)


def _source_matrix(a: np.ndarray, targets: np.ndarray, geom: KernelGeometry) -> np.ndarray:
    """Rows ordered (readout, target); columns ordered (coil, source line, tap)."""
    n_coils, n_ro, _ = a.shape
    h = geom.kx_taps // 2
    # k-space is periodic along the readout under the DFT: wrap the taps
    padded = np.pad(a, ((0, 0), (h, h), (0, 0)), mode="wrap")
    ro = np.arange(n_ro)[:, None] + np.arange(geom.kx_taps)[None, :]      # [R, T]
    src_lines = targets[:, None] + np.array(geom.offsets)[None, :]         # [P, L]
    # [C, R, T, P, L]
    block = padded[:, ro[:, :, None, None], src_lines[None, None, :, :]]
    block = block.transpose(1, 3, 0, 4, 2)                                 # [R, P, C, L, T]
    return block.reshape(n_ro * targets.size, n_coils * geom.n_source_lines * geom.kx_taps)


def _ridge_solve(A: np.ndarray, B: np.ndarray, lambda_rel: float) -> np.ndarray:
    if lambda_rel > 0:
        lam = lambda_rel * np.mean(np.sum(np.abs(A) ** 2, axis=0))
        A = np.vstack([A, np.sqrt(lam) * np.eye(A.shape[1])])
        B = np.vstack([B, np.zeros((A.shape[1], B.shape[1]), dtype=B.dtype)])
    W, *_ = np.linalg.lstsq(A, B, rcond=None)
    return W


def calibrate(kspace: KSpaceGrid, geometries, acs: tuple[int, int],
              lambda_rel: float = 1e-4, config: GrappaConfig | None = None) -> GrappaKernelSet:
    """Ridge least-squares kernels fitted over every sliding window inside the ACS lines.

    Weights are stored as [target_coil, source_coil, source_line, kx_tap].
    """
    a = _lines_last(kspace).astype(complex, copy=False)
    n_coils, n_ro, n_lines = a.shape
    lo, hi = acs
    if not (0 <= lo < hi <= n_lines):
        raise SizingError(f"ACS extent {acs} outside 0..{n_lines}")
    kernels, residuals = {}, {}
    for geom in sorted(geometries):
        lo_off, hi_off = min(geom.offsets + (0,)), max(geom.offsets + (0,))
        targets = np.arange(lo - lo_off, hi - hi_off)
        if targets.size < 1 or geom.kx_taps > n_ro:
            raise SizingError(f"ACS {acs} too small for geometry {geom}")
        A = _source_matrix(a, targets, geom)
        B = a[:, :, targets].transpose(1, 2, 0).reshape(-1, n_coils)
        W = _ridge_solve(A, B, lambda_rel)
        norm_b = np.linalg.norm(B)
        residuals[geom] = float(np.linalg.norm(A @ W - B) / norm_b) if norm_b > 0 else 0.0
        kernels[geom] = W.T.reshape(n_coils, n_coils, geom.n_source_lines, geom.kx_taps)
    if config is None:
        config = GrappaConfig(lambda_rel=lambda_rel)
    return GrappaKernelSet(kernels, lambda_rel, (lo, hi), config, residuals)


def fill(kspace_masked: KSpaceGrid, mask: SamplingMask, kernels: GrappaKernelSet) -> KSpaceGrid:
    """Estimate missing lines; acquired samples are copied through untouched.

    Cascaded (extrapolated) lines are only written when the kernel's
    calibration residual is at most ``cascade_max_residual``, since the
    prediction error compounds with cascade depth. Skipped lines stay zero and
    lines that would be sourced from them are skipped too.
    """
    if mask.n_lines != kspace_masked.n_lines:
        raise ValidationError("mask length does not match k-space lines")
    plan = plan_fill(mask, kernels.config, kernels.max_span)
    for geom in sorted(plan.geometries):
        if geom not in kernels.kernels:
            raise GeometryError(f"no kernel calibrated for geometry {geom}")
    a = _lines_last(kspace_masked).astype(complex, copy=True)
    n_coils, n_ro, _ = a.shape
    valid = mask.lines.copy()
    gate = kernels.config.cascade_max_residual
    for index, p in enumerate(plan.passes):
        cascade = plan.is_cascade(index)
        updates = []
        for geom, targets in p.items():
            if cascade:
                if kernels.residuals.get(geom, np.inf) > gate:
                    continue
                usable = np.all(valid[targets[:, None] + np.array(geom.offsets)[None, :]], axis=1)
                targets = targets[usable]
                if targets.size == 0:
                    continue
            w = kernels.kernels[geom]
            A = _source_matrix(a, targets, geom)
            est = A @ w.reshape(n_coils, -1).T                 # [(R*P), C]
            est = est.reshape(n_ro, targets.size, n_coils).transpose(2, 0, 1)
            updates.append((targets, est))
        for targets, est in updates:
            a[:, :, targets] = est
            valid[targets] = True
    out = a if kspace_masked.line_axis == 1 else np.swapaxes(a, 1, 2)
    return kspace_masked.with_data(out)


def grappa_reconstruct(kspace_masked: KSpaceGrid, mask: SamplingMask,
                       config: GrappaConfig = GrappaConfig()) -> tuple[KSpaceGrid, GrappaKernelSet]:
    """Calibrate on the mask's ACS block and fill all missing lines."""
    acs = acs_extent(mask)
    geoms = enumerate_geometries(mask, config)
    kernels = calibrate(kspace_masked, geoms, acs, config.lambda_rel, config)
    if not geoms:
        return kspace_masked, kernels
    return fill(kspace_masked, mask, kernels), kernels
