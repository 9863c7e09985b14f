"""Composite training loss: weighted content + L1 + (1 - SSIM), with analytic gradients.

All functions accept a single image ``[H, W]`` or a batch ``[N, H, W]``.
Batched values are the mean of the per-image values, and gradients are
scaled to match.

The content loss compares feature maps of a fixed, non-trainable extractor:
four blocks of (3x3 conv bank, ReLU, 2x2 average pool), 16 filters each,
weights drawn once from ``default_rng(FEATURE_SEED)`` as unit normals
divided by sqrt(fan-in). Block i contributes
``theta[i] * ||F_ref(i) - F_pred(i)||^2 / size(F_ref(i))``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .enhancer.layers import conv2d, conv2d_backward
from .errors import ValidationError

FEATURE_SEED = 20231
FEATURE_FILTERS = 16
FEATURE_BLOCKS = 4

SSIM_WINDOW = 7
SSIM_K1 = 0.01
SSIM_K2 = 0.03


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 1e-4
    beta: float = 1.0
    gamma: float = 100.0
    theta: tuple = (0.001, 0.01, 2.0, 4.0)

    def __post_init__(self):
        theta = tuple(float(t) for t in self.theta)
        object.__setattr__(self, "theta", theta)
        if len(theta) != FEATURE_BLOCKS:
            raise ValidationError(f"theta needs {FEATURE_BLOCKS} entries, got {len(theta)}")
        if min(self.alpha, self.beta, self.gamma, *theta) < 0:
            raise ValidationError("loss weights must be nonnegative")


def _as_batch(pred, ref):
    pred = np.asarray(pred, dtype=float)
    ref = np.asarray(ref, dtype=float)
    if pred.shape != ref.shape:
        raise ValidationError(f"shape mismatch: pred {pred.shape}, ref {ref.shape}")
    if pred.ndim == 2:
        return pred[None], ref[None], True
    if pred.ndim != 3:
        raise ValidationError(f"expected [H, W] or [N, H, W], got {pred.shape}")
    return pred, ref, False


def _unbatch(value, grad, single):
    return float(value), (grad[0] if single else grad)


class FeatureExtractor:
    """Fixed conv/ReLU/avg-pool feature pyramid."""

    def __init__(self, weights: list[np.ndarray] | None = None, seed: int = FEATURE_SEED):
        if weights is None:
            rng = np.random.default_rng(seed)
            weights, c_in = [], 1
            for _ in range(FEATURE_BLOCKS):
                w = rng.standard_normal((FEATURE_FILTERS, c_in, 3, 3)) / np.sqrt(9 * c_in)
                weights.append(w)
                c_in = FEATURE_FILTERS
        if len(weights) != FEATURE_BLOCKS:
            raise ValidationError(f"extractor needs {FEATURE_BLOCKS} weight banks")
        self.weights = []
        for w in weights:
            w = np.array(w, dtype=float)
            w.setflags(write=False)
            self.weights.append(w)

    def forward(self, x: np.ndarray):
        """x: [N, H, W] -> (features per block, cache for backward)."""
        h = x[:, None]
        feats, cache = [], []
        for w in self.weights:
            z = conv2d(h, w)
            r = np.maximum(z, 0)
            n, c, hh, ww = r.shape
            h2, w2 = hh // 2, ww // 2
            if h2 == 0 or w2 == 0:
                raise ValidationError(f"image too small for {FEATURE_BLOCKS} pooling blocks")
            p = r[:, :, :2 * h2, :2 * w2].reshape(n, c, h2, 2, w2, 2).mean(axis=(3, 5))
            cache.append((h, z))
            feats.append(p)
            h = p
        return feats, cache

    def backward(self, dfeats: list[np.ndarray], cache) -> np.ndarray:
        """Propagate per-block feature gradients back to the input image."""
        g = None
        for i in range(FEATURE_BLOCKS - 1, -1, -1):
            g = dfeats[i] if g is None else g + dfeats[i]
            h, z = cache[i]
            up = np.zeros_like(z)
            h2, w2 = g.shape[2], g.shape[3]
            up[:, :, :2 * h2, :2 * w2] = g.repeat(2, axis=2).repeat(2, axis=3) / 4.0
            dz = np.where(z > 0, up, 0.0)
            g, _, _ = conv2d_backward(dz, h, self.weights[i])
        return g[:, 0]


_DEFAULT_EXTRACTOR: FeatureExtractor | None = None


def default_extractor() -> FeatureExtractor:
    global _DEFAULT_EXTRACTOR
    if _DEFAULT_EXTRACTOR is None:
        _DEFAULT_EXTRACTOR = FeatureExtractor()
    return _DEFAULT_EXTRACTOR


def content_loss(pred, ref, extractor: FeatureExtractor | None = None,
                 theta=LossWeights().theta) -> tuple[float, np.ndarray]:
    p, r, single = _as_batch(pred, ref)
    ex = default_extractor() if extractor is None else extractor
    fp, cache = ex.forward(p)
    fr, _ = ex.forward(r)
    n = p.shape[0]
    value = 0.0
    dfeats = []
    for t, a, b in zip(theta, fp, fr):
        per_image = a[0].size
        d = a - b
        value += t * np.sum(d * d) / (per_image * n)
        dfeats.append(2 * t * d / (per_image * n))
    return _unbatch(value, ex.backward(dfeats, cache), single)


def l1_loss(pred, ref) -> tuple[float, np.ndarray]:
    p, r, single = _as_batch(pred, ref)
    d = p - r
    return _unbatch(np.mean(np.abs(d)), np.sign(d) / d.size, single)


def _box_valid(a: np.ndarray, k: int) -> np.ndarray:
    """Mean over every k x k window fully inside the last two axes."""
    c = np.cumsum(np.cumsum(a, axis=-2), axis=-1)
    c = np.pad(c, [(0, 0)] * (a.ndim - 2) + [(1, 0), (1, 0)])
    s = c[..., k:, k:] - c[..., :-k, k:] - c[..., k:, :-k] + c[..., :-k, :-k]
    return s / (k * k)


def _box_adjoint(g: np.ndarray, k: int) -> np.ndarray:
    """Adjoint of :func:`_box_valid`: spread each window value back over its pixels."""
    pad = [(0, 0)] * (g.ndim - 2) + [(k - 1, k - 1), (k - 1, k - 1)]
    return _box_valid(np.pad(g, pad), k)


@dataclass
class SSIMResult:
    mean: float
    map: np.ndarray
    grad: np.ndarray = field(repr=False)


def ssim(pred, ref, window: int = SSIM_WINDOW, k1: float = SSIM_K1, k2: float = SSIM_K2,
         data_range: float | None = None, gradient: bool = True) -> SSIMResult:
    """Uniform-window SSIM over valid windows with sample (N-1) variances.

    ``data_range`` defaults to the reference maximum, per image. The map has
    shape ``[..., H - window + 1, W - window + 1]``; for a batch ``mean`` is
    the mean of per-image means.
    """
    p, r, single = _as_batch(pred, ref)
    if window < 2 or window > min(p.shape[1:]):
        raise ValidationError(f"window {window} does not fit image {p.shape[1:]}")
    if data_range is None:
        dr = r.reshape(len(r), -1).max(axis=1)
    else:
        dr = np.full(len(r), float(data_range))
    if np.any(dr <= 0):
        raise ValidationError("data_range must be > 0")
    c1 = ((k1 * dr) ** 2)[:, None, None]
    c2 = ((k2 * dr) ** 2)[:, None, None]
    cov = window * window / (window * window - 1.0)
    # moments of mean-shifted images: flat windows get exactly zero variance
    sp = p.mean(axis=(1, 2), keepdims=True)
    sr = r.mean(axis=(1, 2), keepdims=True)
    pc, rc = p - sp, r - sr
    mx, my = _box_valid(pc, window), _box_valid(rc, window)
    ux, uy = mx + sp, my + sr
    vx = cov * (_box_valid(pc * pc, window) - mx * mx)
    vy = cov * (_box_valid(rc * rc, window) - my * my)
    vxy = cov * (_box_valid(pc * rc, window) - mx * my)
    a1 = 2 * ux * uy + c1
    a2 = 2 * vxy + c2
    b1 = ux * ux + uy * uy + c1
    b2 = vx + vy + c2
    smap = a1 * a2 / (b1 * b2)
    n = p.shape[0]
    m = smap[0].size
    grad = None
    if gradient:
        # d mean / d S_w = 1/(n m); chain through the shifted moments (mx, box(pc^2), box(pc rc))
        scale = 1.0 / (n * m)
        d_mx = smap * (2 * uy / a1 - 2 * ux / b1 - 2 * cov * my / a2 + 2 * cov * mx / b2) * scale
        d_qxx = -smap * cov / b2 * scale
        d_qxy = smap * 2 * cov / a2 * scale
        grad = (_box_adjoint(d_mx, window) + 2 * pc * _box_adjoint(d_qxx, window)
                + rc * _box_adjoint(d_qxy, window))
        if single:
            grad = grad[0]
    mean = float(np.mean(smap.reshape(n, -1).mean(axis=1)))
    return SSIMResult(mean, smap[0] if single else smap, grad)


def ssim_loss(pred, ref) -> tuple[float, np.ndarray]:
    res = ssim(pred, ref)
    return 1.0 - res.mean, -res.grad


def composite_loss(pred, ref, weights: LossWeights = LossWeights(),
                   extractor: FeatureExtractor | None = None,
                   components: dict | None = None) -> tuple[float, np.ndarray]:
    """alpha * content + beta * L1 + gamma * (1 - SSIM); terms with zero weight are skipped."""
    p, r, _ = _as_batch(pred, ref)
    value = 0.0
    grad = np.zeros(np.shape(pred))
    parts = {}
    if weights.alpha:
        v, g = content_loss(pred, ref, extractor, weights.theta)
        value += weights.alpha * v
        grad += weights.alpha * g
        parts["content"] = v
    if weights.beta:
        v, g = l1_loss(pred, ref)
        value += weights.beta * v
        grad += weights.beta * g
        parts["l1"] = v
    if weights.gamma:
        v, g = ssim_loss(pred, ref)
        value += weights.gamma * v
        grad += weights.gamma * g
        parts["ssim"] = v
    if components is not None:
        components.update(parts)
    return float(value), grad
