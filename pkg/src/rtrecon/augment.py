"""Pair augmentation: 19 seeded variants per (input, reference) pair.

Geometric kinds warp input and reference together (bilinear, zero fill);
photometric kinds touch the input only. Parameter intervals:

    hflip             -
    dropout           rate   [0.01, 0.05]
    gaussian_noise    scale  [0, 12.75]   on a 0-255 scale, so std = scale / 255 * full_scale
    gaussian_blur     sigma  [0.8, 1.5]
    piecewise_affine  scale  [0.01, 0.07] control-point jitter std, fraction of extent
    elastic           alpha  [2.5, 50], sigma [1, 11]
    affine            angle  [-20, 20] deg, zoom [0.7, 1.5], shift [-0.01, 0.01] of extent
    rotation          angle  [-30, 30] deg, in-plane
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.interpolate import LinearNDInterpolator

from .dataset import TrainingPair
from .errors import ValidationError

KINDS = ("hflip", "dropout", "gaussian_noise", "gaussian_blur",
         "piecewise_affine", "elastic", "affine", "rotation")
GEOMETRIC = {"hflip", "piecewise_affine", "elastic", "affine", "rotation", "identity"}

RANGES = {
    "hflip": {},
    "identity": {},
    "dropout": {"rate": (0.01, 0.05)},
    "gaussian_noise": {"scale": (0.0, 12.75)},
    "gaussian_blur": {"sigma": (0.8, 1.5)},
    "piecewise_affine": {"scale": (0.01, 0.07)},
    "elastic": {"alpha": (2.5, 50.0), "sigma": (1.0, 11.0)},
    "affine": {"angle": (-20.0, 20.0), "zoom": (0.7, 1.5),
               "shift_row": (-0.01, 0.01), "shift_col": (-0.01, 0.01)},
    "rotation": {"angle": (-30.0, 30.0)},
}

DEFAULT_RECIPE = (("hflip", 1), ("dropout", 2), ("gaussian_noise", 3), ("gaussian_blur", 2),
                  ("piecewise_affine", 3), ("elastic", 3), ("affine", 3), ("rotation", 2))

PIECEWISE_GRID = 4


@dataclass(frozen=True)
class TransformSpec:
    kind: str
    params: dict = field(default_factory=dict)
    seed: int = 0
    check_ranges: bool = True

    def __post_init__(self):
        if self.kind not in RANGES:
            raise ValidationError(f"unknown transform kind {self.kind!r}")
        expected = set(RANGES[self.kind])
        if set(self.params) != expected:
            raise ValidationError(f"{self.kind} needs parameters {sorted(expected)}, "
                                  f"got {sorted(self.params)}")
        if self.check_ranges:
            for name, (lo, hi) in RANGES[self.kind].items():
                v = self.params[name]
                if not lo <= v <= hi:
                    raise ValidationError(f"{self.kind}.{name}={v} outside [{lo}, {hi}]")

    @property
    def geometric(self) -> bool:
        return self.kind in GEOMETRIC

    def describe(self) -> str:
        p = " ".join(f"{k}={v:.6g}" for k, v in sorted(self.params.items()))
        return f"{self.kind} {p} seed={self.seed}".replace("  ", " ").strip()


def parse_recipe(text: str) -> tuple:
    """``kind=count`` lines (or comma separated) -> recipe tuple, in canonical kind order."""
    counts = {}
    for item in text.replace(",", "\n").splitlines():
        item = item.split("#", 1)[0].strip()
        if not item:
            continue
        k, _, v = item.partition("=")
        k = k.strip()
        if k not in RANGES:
            raise ValidationError(f"unknown transform kind {k!r} in recipe")
        counts[k] = int(v)
        if counts[k] < 0:
            raise ValidationError(f"negative count for {k}")
    order = ("identity",) + KINDS
    return tuple((k, counts[k]) for k in order if counts.get(k))


def build_plan(seed: int, recipe=DEFAULT_RECIPE) -> list[TransformSpec]:
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), 0xA06])))
    plan = []
    for kind, count in recipe:
        for _ in range(count):
            params = {name: float(rng.uniform(lo, hi))
                      for name, (lo, hi) in RANGES[kind].items()}
            plan.append(TransformSpec(kind, params, int(rng.integers(0, 2 ** 63))))
    return plan


def _warp(img: np.ndarray, src_rows: np.ndarray, src_cols: np.ndarray) -> np.ndarray:
    """Sample each channel of [C, H, W] (or [H, W]) at the given source coordinates."""
    coords = np.stack([src_rows, src_cols])
    if img.ndim == 2:
        return ndimage.map_coordinates(img, coords, order=1, mode="constant", cval=0.0)
    return np.stack([ndimage.map_coordinates(c, coords, order=1, mode="constant", cval=0.0)
                     for c in img])


def _grid(shape):
    return np.meshgrid(np.arange(shape[0], dtype=float), np.arange(shape[1], dtype=float),
                       indexing="ij")


def _affine_coords(shape, angle_deg: float, zoom: float = 1.0, shift=(0.0, 0.0)):
    # inverse map: output pixel -> source pixel, rotation/zoom about the image center
    rows, cols = _grid(shape)
    cr, cc = (shape[0] - 1) / 2, (shape[1] - 1) / 2
    t = np.deg2rad(angle_deg)
    dr = rows - cr - shift[0] * shape[0]
    dc = cols - cc - shift[1] * shape[1]
    src_r = (np.cos(t) * dr - np.sin(t) * dc) / zoom + cr
    src_c = (np.sin(t) * dr + np.cos(t) * dc) / zoom + cc
    return src_r, src_c


def elastic_displacement(shape, alpha: float, sigma: float, seed: int):
    rng = np.random.Generator(np.random.PCG64(seed))
    fr = rng.standard_normal(shape)
    fc = rng.standard_normal(shape)
    return (alpha * ndimage.gaussian_filter(fr, sigma, mode="constant"),
            alpha * ndimage.gaussian_filter(fc, sigma, mode="constant"))


def piecewise_displacement(shape, scale: float, seed: int, n: int = PIECEWISE_GRID):
    """Jitter an n x n control grid and interpolate linearly over its triangulation."""
    rng = np.random.Generator(np.random.PCG64(seed))
    gr, gc = np.meshgrid(np.linspace(0, shape[0] - 1, n), np.linspace(0, shape[1] - 1, n),
                         indexing="ij")
    pts = np.stack([gr.ravel(), gc.ravel()], axis=1)
    jitter = rng.standard_normal(pts.shape) * scale * np.array(shape, dtype=float)
    interp = LinearNDInterpolator(pts, jitter, fill_value=0.0)
    rows, cols = _grid(shape)
    d = interp(rows, cols)
    return d[..., 0], d[..., 1]


def _geometric_coords(shape, spec: TransformSpec):
    p = spec.params
    rows, cols = _grid(shape)
    if spec.kind == "affine":
        return _affine_coords(shape, p["angle"], p["zoom"], (p["shift_row"], p["shift_col"]))
    if spec.kind == "rotation":
        return _affine_coords(shape, p["angle"])
    if spec.kind == "elastic":
        dr, dc = elastic_displacement(shape, p["alpha"], p["sigma"], spec.seed)
        return rows + dr, cols + dc
    if spec.kind == "piecewise_affine":
        dr, dc = piecewise_displacement(shape, p["scale"], spec.seed)
        return rows + dr, cols + dc
    raise ValidationError(f"{spec.kind} is not a warp")


def additive_noise(x: np.ndarray, scale: float, rng: np.random.Generator,
                   full_scale: float = 1.0) -> np.ndarray:
    return x + rng.normal(0.0, scale / 255.0 * full_scale, size=x.shape)


def apply_transform(pair: TrainingPair, spec: TransformSpec) -> TrainingPair:
    x, y = pair.input, pair.reference
    shape = y.shape
    p = spec.params
    if spec.kind == "identity":
        return TrainingPair(x.copy(), y.copy(), pair.source)
    if spec.kind == "hflip":
        return TrainingPair(x[:, :, ::-1].copy(), y[:, ::-1].copy(), pair.source)
    if spec.geometric:
        src_r, src_c = _geometric_coords(shape, spec)
        return TrainingPair(_warp(x, src_r, src_c), np.maximum(_warp(y, src_r, src_c), 0.0),
                            pair.source)
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    if spec.kind == "dropout":
        keep = rng.random(shape) >= p["rate"]
        return TrainingPair(x * keep[None], y.copy(), pair.source)
    if spec.kind == "gaussian_noise":
        # inputs are range normalized to [0, 1], so the 8-bit full scale maps to 1
        return TrainingPair(additive_noise(x, p["scale"], rng), y.copy(), pair.source)
    if spec.kind == "gaussian_blur":
        blurred = np.stack([ndimage.gaussian_filter(c, p["sigma"]) for c in x])
        return TrainingPair(blurred, y.copy(), pair.source)
    raise ValidationError(f"unhandled transform {spec.kind}")


def pair_plan_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(index)]).generate_state(1, np.uint64)[0] >> 1)


def augment_pair(pair: TrainingPair, plan: list[TransformSpec]) -> list[TrainingPair]:
    return [apply_transform(pair, s) for s in plan]


def augment_dataset(pairs: list[TrainingPair], seed: int, recipe=DEFAULT_RECIPE,
                    plans: list | None = None) -> list[TrainingPair]:
    """len(recipe total) variants per pair, each pair with its own seeded plan."""
    out = []
    for i, pair in enumerate(pairs):
        plan = build_plan(pair_plan_seed(seed, i), recipe)
        if plans is not None:
            plans.append(plan)
        out.extend(augment_pair(pair, plan))
    return out
