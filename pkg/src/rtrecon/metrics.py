"""Image quality metrics: SSIM, PSNR, NMSE, and Dice / Hausdorff on Canny edge maps.

PSNR and SSIM take the reference maximum as the peak / data range.
Canny: Gaussian smoothing (edge-replicated borders), Sobel gradients,
non-maximum suppression over 4 direction bins, then hysteresis with
high = 0.2 and low = 0.1 of the maximum gradient magnitude and 8-connected
linking. In non-maximum suppression a pixel must strictly beat its
lower-index neighbour and at least equal its higher-index one, so a
two-pixel plateau keeps only its first pixel.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .errors import ValidationError
from .loss import ssim as _ssim

PSNR_INF = math.inf
CANNY_SIGMA = 5.0
CANNY_HIGH = 0.2
CANNY_LOW = 0.1
METRIC_FIELDS = ("ssim", "psnr", "nmse", "dice_hfc", "hausdorff_hfc")


def _pair(pred, ref):
    pred = np.asarray(pred, dtype=float)
    ref = np.asarray(ref, dtype=float)
    if pred.shape != ref.shape or pred.ndim != 2:
        raise ValidationError(f"expected two equal 2-D images, got {pred.shape} and {ref.shape}")
    return pred, ref


def ssim(pred, ref) -> float:
    pred, ref = _pair(pred, ref)
    return _ssim(pred, ref, gradient=False).mean


def psnr(pred, ref) -> float:
    pred, ref = _pair(pred, ref)
    peak = ref.max()
    if not np.any(ref):
        raise ValidationError("reference is identically zero")
    mse = np.mean((pred - ref) ** 2)
    if mse == 0:
        return PSNR_INF
    return float(10 * np.log10(peak ** 2 / mse))


def nmse(pred, ref) -> float:
    pred, ref = np.asarray(pred), np.asarray(ref)
    if pred.shape != ref.shape:
        raise ValidationError(f"shape mismatch {pred.shape} vs {ref.shape}")
    den = np.sum(np.abs(ref) ** 2)
    if den == 0:
        raise ValidationError("reference is identically zero")
    return float(np.sum(np.abs(pred - ref) ** 2) / den)


@dataclass(frozen=True)
class EdgeMap:
    edges: np.ndarray
    sigma: float

    def __post_init__(self):
        object.__setattr__(self, "edges", np.asarray(self.edges, dtype=bool))

    @property
    def count(self) -> int:
        return int(self.edges.sum())


# direction bin -> (lower-index neighbour offset); the other neighbour is its negation
_NMS_OFFSETS = {0: (0, -1), 1: (-1, -1), 2: (-1, 0), 3: (-1, 1)}


def gradient(image: np.ndarray, sigma: float) -> tuple[np.ndarray, np.ndarray]:
    s = ndimage.gaussian_filter(np.asarray(image, dtype=float), sigma, mode="nearest")
    gy = ndimage.sobel(s, axis=0, mode="nearest")
    gx = ndimage.sobel(s, axis=1, mode="nearest")
    return gy, gx


def non_max_suppression(mag: np.ndarray, gy: np.ndarray, gx: np.ndarray) -> np.ndarray:
    angle = np.rad2deg(np.arctan2(gy, gx)) % 180.0
    bins = np.digitize(angle, [22.5, 67.5, 112.5, 157.5]) % 4
    padded = np.pad(mag, 1)
    h, w = mag.shape
    keep = np.zeros_like(mag, dtype=bool)
    for b, (dr, dc) in _NMS_OFFSETS.items():
        lower = padded[1 + dr:1 + dr + h, 1 + dc:1 + dc + w]
        upper = padded[1 - dr:1 - dr + h, 1 - dc:1 - dc + w]
        keep |= (bins == b) & (mag > lower) & (mag >= upper)
    return keep & (mag > 0)


def canny_edges(image, sigma: float = CANNY_SIGMA, high: float = CANNY_HIGH,
                low: float = CANNY_LOW) -> EdgeMap:
    if not sigma > 0:
        raise ValidationError(f"sigma must be > 0, got {sigma}")
    image = np.asarray(image, dtype=float)
    gy, gx = gradient(image, sigma)
    mag = np.hypot(gy, gx)
    peak = mag.max()
    # relative tolerance: smoothing a constant image leaves rounding-level gradients
    if peak <= 1e-12 * max(1.0, np.abs(image).max()):
        return EdgeMap(np.zeros(image.shape, dtype=bool), sigma)
    cand = non_max_suppression(mag, gy, gx)
    strong = cand & (mag >= high * peak)
    weak = cand & (mag >= low * peak)
    labels, n = ndimage.label(weak, structure=np.ones((3, 3), dtype=int))
    if n == 0:
        return EdgeMap(np.zeros(image.shape, dtype=bool), sigma)
    hit = np.zeros(n + 1, dtype=bool)
    hit[np.unique(labels[strong])] = True
    hit[0] = False
    return EdgeMap(hit[labels], sigma)


def _edges(m) -> np.ndarray:
    return m.edges if isinstance(m, EdgeMap) else np.asarray(m, dtype=bool)


def dice(r, y) -> float:
    """2|R & Y| / (|R| + |Y|); two empty maps count as perfect agreement (1)."""
    r, y = _edges(r), _edges(y)
    if r.shape != y.shape:
        raise ValidationError(f"edge map shapes differ: {r.shape} vs {y.shape}")
    total = int(r.sum()) + int(y.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(r, y).sum()) / total


def hausdorff(r, y) -> float:
    """Exact symmetric Hausdorff distance (pixels) between edge-pixel sets."""
    r, y = _edges(r), _edges(y)
    a = np.argwhere(r).astype(float)
    b = np.argwhere(y).astype(float)
    if len(a) == 0 or len(b) == 0:
        raise ValidationError("Hausdorff distance is undefined for an empty edge set")
    d_ab = cKDTree(b).query(a)[0].max()
    d_ba = cKDTree(a).query(b)[0].max()
    return float(max(d_ab, d_ba))


@dataclass(frozen=True)
class MetricsReport:
    ssim: float
    psnr: float
    nmse: float
    dice_hfc: float
    hausdorff_hfc: float | None  # None when either edge map is empty
    label: str = ""

    def as_dict(self) -> dict:
        return asdict(self)


def evaluate(pred, ref, sigma: float = CANNY_SIGMA, label: str = "") -> MetricsReport:
    pred, ref = _pair(pred, ref)
    er, ep = canny_edges(ref, sigma), canny_edges(pred, sigma)
    try:
        hd = hausdorff(ep, er)
    except ValidationError:
        hd = None
    return MetricsReport(ssim(pred, ref), psnr(pred, ref), nmse(pred, ref),
                         dice(ep, er), hd, label)


def aggregate(reports: list[MetricsReport]) -> dict[str, tuple[float, float, int]]:
    """Per metric: (mean, population std, count); absent Hausdorff values are skipped."""
    out = {}
    for name in METRIC_FIELDS:
        vals = np.array([getattr(r, name) for r in reports if getattr(r, name) is not None],
                        dtype=float)
        if len(vals) == 0:
            out[name] = (math.nan, math.nan, 0)
        elif np.any(np.isinf(vals)):
            out[name] = (float(np.mean(vals)), math.nan, len(vals))
        else:
            out[name] = (float(vals.mean()), float(vals.std()), len(vals))
    return out
