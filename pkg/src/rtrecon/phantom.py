"""Synthetic ground truth: Shepp-Logan slices, RT-style coil sensitivities, noisy k-space.

Image coordinates: x = (2*col + 1)/cols - 1 increases to the right and
y = 1 - (2*row + 1)/rows increases upward, so pixel centers cover (-1, 1).
Coil geometry uses normalized pixel-center coordinates
((row + 0.5)/rows, (col + 0.5)/cols) in [0, 1]^2.

Slice jitter (per slice, drawn from the (seed, slice index) stream):
ellipse centers +-0.02, semi-axes x[0.95, 1.05], angles +-3 degrees,
intensities of the inner ellipses (3..10) x[0.8, 1.2].
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .grid import CoilImageStack, KSpaceGrid, fft2c

# (intensity, semi-axis a (x), semi-axis b (y), x0, y0, angle in degrees)
SHEPP_LOGAN_ELLIPSES = np.array([
    [1.0, 0.69, 0.92, 0.0, 0.0, 0.0],
    [-0.8, 0.6624, 0.8740, 0.0, -0.0184, 0.0],
    [-0.2, 0.1100, 0.3100, 0.22, 0.0, -18.0],
    [-0.2, 0.1600, 0.4100, -0.22, 0.0, 18.0],
    [0.1, 0.2100, 0.2500, 0.0, 0.35, 0.0],
    [0.1, 0.0460, 0.0460, 0.0, 0.1, 0.0],
    [0.1, 0.0460, 0.0460, 0.0, -0.1, 0.0],
    [0.1, 0.0460, 0.0230, -0.08, -0.605, 0.0],
    [0.1, 0.0230, 0.0230, 0.0, -0.606, 0.0],
    [0.1, 0.0230, 0.0460, 0.06, -0.605, 0.0],
])


def pixel_coordinates(rows: int, cols: int) -> tuple[np.ndarray, np.ndarray]:
    x = (2 * np.arange(cols) + 1) / cols - 1
    y = 1 - (2 * np.arange(rows) + 1) / rows
    return np.meshgrid(x, y)


def inside_ellipse(x, y, ellipse) -> np.ndarray:
    _, a, b, x0, y0, phi = ellipse
    t = np.deg2rad(phi)
    dx, dy = x - x0, y - y0
    u = dx * np.cos(t) + dy * np.sin(t)
    v = -dx * np.sin(t) + dy * np.cos(t)
    return (u / a) ** 2 + (v / b) ** 2 <= 1.0


def render_ellipses(rows: int, cols: int, ellipses: np.ndarray) -> np.ndarray:
    """Sum ellipse intensities per pixel, clip at 0, normalize the max to 1."""
    if rows < 8 or cols < 8:
        raise ValidationError(f"phantom needs rows, cols >= 8, got {rows}x{cols}")
    x, y = pixel_coordinates(rows, cols)
    img = np.zeros((rows, cols))
    for e in ellipses:
        img[inside_ellipse(x, y, e)] += e[0]
    img = np.clip(img, 0.0, None)
    peak = img.max()
    return img / peak if peak > 0 else img


def shepp_logan(rows: int, cols: int) -> np.ndarray:
    return render_ellipses(rows, cols, SHEPP_LOGAN_ELLIPSES)


def slice_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), int(index)])))


def jittered_ellipses(seed: int, index: int) -> np.ndarray:
    rng = slice_rng(seed, index)
    e = SHEPP_LOGAN_ELLIPSES.copy()
    n = len(e)
    e[:, 3:5] += rng.uniform(-0.02, 0.02, size=(n, 2))
    e[:, 1:3] *= rng.uniform(0.95, 1.05, size=(n, 2))
    e[:, 5] += rng.uniform(-3.0, 3.0, size=n)
    e[2:, 0] *= rng.uniform(0.8, 1.2, size=n - 2)
    return e


@dataclass(frozen=True)
class CoilLayout:
    centers: np.ndarray      # [n, 2] (row, col), normalized
    radii: np.ndarray        # [n], normalized
    gains: np.ndarray        # [n]
    sigmas: np.ndarray       # [n], k-space noise std per channel
    phase_slopes: np.ndarray  # [n, 2] radians per unit normalized distance

    def __post_init__(self):
        centers = np.atleast_2d(np.asarray(self.centers, dtype=float))
        n = centers.shape[0]
        fields = {"centers": centers}
        for name in ("radii", "gains", "sigmas"):
            fields[name] = np.broadcast_to(np.asarray(getattr(self, name), dtype=float), (n,)).copy()
        fields["phase_slopes"] = np.broadcast_to(
            np.asarray(self.phase_slopes, dtype=float), (n, 2)).copy()
        if n < 1 or centers.shape[1] != 2:
            raise ValidationError("coil layout needs >= 1 coil with (row, col) centers")
        if np.any(fields["gains"] <= 0) or np.any(fields["radii"] <= 0):
            raise ValidationError("coil gains and radii must be positive")
        if np.any(fields["sigmas"] < 0):
            raise ValidationError("noise sigmas must be nonnegative")
        for k, v in fields.items():
            object.__setattr__(self, k, v)

    @property
    def n_coils(self) -> int:
        return self.centers.shape[0]

    def noiseless(self) -> "CoilLayout":
        return CoilLayout(self.centers, self.radii, self.gains, np.zeros(self.n_coils),
                          self.phase_slopes)


def rt_layout(n_coils: int = 12) -> CoilLayout:
    """Loop + posterior layout with imbalanced channel noise.

    The first ``n_loop = min(4, n_coils)`` channels are bilateral loop coils
    (strong, quiet); the rest sit along the posterior edge (weaker, noisier).
    """
    n_loop = min(4, n_coils)
    loop_centers = [(0.35, -0.05), (0.65, -0.05), (0.35, 1.05), (0.65, 1.05)][:n_loop]
    n_post = n_coils - n_loop
    post_cols = (np.arange(n_post) + 0.5) / max(n_post, 1)
    centers = np.array(loop_centers + [(1.05, c) for c in post_cols])
    radii = np.array([0.40] * n_loop + [0.28] * n_post)
    gains = np.array([1.0] * n_loop + [0.6] * n_post)
    sigmas = np.array([0.004] * n_loop + [0.02] * n_post)
    k = np.arange(n_coils)
    slopes = np.stack([1.5 * np.cos(0.9 * k + 0.3), 1.5 * np.sin(0.9 * k + 0.3)], axis=1)
    return CoilLayout(centers, radii, gains, sigmas, slopes)


def three_coil_layout() -> CoilLayout:
    """Small noiseless layout used for GRAPPA checks."""
    return CoilLayout(
        centers=[(0.5, 0.0), (0.5, 1.0), (1.0, 0.5)],
        radii=[0.45, 0.45, 0.45],
        gains=[1.0, 1.0, 1.0],
        sigmas=[0.0, 0.0, 0.0],
        phase_slopes=[(1.0, 0.5), (-0.5, 1.0), (0.8, -0.8)],
    )


def coil_sensitivities(shape: tuple[int, int], layout: CoilLayout) -> np.ndarray:
    rows, cols = shape
    r = (np.arange(rows) + 0.5) / rows
    c = (np.arange(cols) + 0.5) / cols
    rr, cc = np.meshgrid(r, c, indexing="ij")
    out = np.empty((layout.n_coils, rows, cols), dtype=complex)
    for i in range(layout.n_coils):
        dr = rr - layout.centers[i, 0]
        dc = cc - layout.centers[i, 1]
        mag = layout.gains[i] * np.exp(-(dr ** 2 + dc ** 2) / (2 * layout.radii[i] ** 2))
        phase = layout.phase_slopes[i, 0] * dr + layout.phase_slopes[i, 1] * dc
        out[i] = mag * np.exp(1j * phase)
    return out


def simulate_coils(image: np.ndarray, layout: CoilLayout, line_axis: int = 1) -> CoilImageStack:
    image = np.asarray(image, dtype=float)
    sens = coil_sensitivities(image.shape, layout)
    return CoilImageStack(image[None] * sens, line_axis)


def to_kspace_with_noise(stack: CoilImageStack, layout: CoilLayout, seed: int | None = None,
                         rng: np.random.Generator | None = None) -> KSpaceGrid:
    """fft2 per coil plus circular complex Gaussian noise (total std = sigma per channel)."""
    if stack.n_coils != layout.n_coils:
        raise ValidationError(f"stack has {stack.n_coils} coils, layout {layout.n_coils}")
    k = fft2c(stack.data)
    if np.any(layout.sigmas > 0):
        if rng is None:
            rng = np.random.Generator(np.random.PCG64(seed if seed is not None else 0))
        re = rng.standard_normal(k.shape)
        im = rng.standard_normal(k.shape)
        k = k + layout.sigmas[:, None, None] / np.sqrt(2) * (re + 1j * im)
    return KSpaceGrid(k, stack.line_axis)


@dataclass(frozen=True)
class PhantomSlice:
    index: int
    image: np.ndarray
    kspace: KSpaceGrid


def generate_slice(index: int, rows: int, cols: int, layout: CoilLayout, seed: int,
                   line_axis: int = 1, jitter: bool = True) -> PhantomSlice:
    ellipses = jittered_ellipses(seed, index) if jitter else SHEPP_LOGAN_ELLIPSES
    image = render_ellipses(rows, cols, ellipses)
    stack = simulate_coils(image, layout, line_axis)
    # noise stream is separate from the jitter stream and keyed on the slice
    noise_rng = slice_rng(seed, 1_000_003 + index)
    return PhantomSlice(index, image, to_kspace_with_noise(stack, layout, rng=noise_rng))


def generate_dataset(n_slices: int, rows: int, cols: int, layout: CoilLayout | None = None,
                     seed: int = 7, line_axis: int = 1) -> list[PhantomSlice]:
    layout = rt_layout() if layout is None else layout
    return [generate_slice(i, rows, cols, layout, seed, line_axis) for i in range(n_slices)]


def point_source_image(rows: int, cols: int, seed: int, n_points: int = 2) -> np.ndarray:
    """Image with ``n_points`` nonzero pixels at distinct seeded positions.

    Under smooth coil sensitivities every k-space line of such an object is an
    exact linear combination of neighbouring lines across coils (the data are
    rank-limited), so GRAPPA kernels reproduce missing lines exactly.
    """
    if rows < 8 or cols < 8:
        raise ValidationError(f"phantom needs rows, cols >= 8, got {rows}x{cols}")
    rng = slice_rng(seed, 0)
    flat = rng.choice(rows * cols, size=n_points, replace=False)
    img = np.zeros(rows * cols)
    img[flat] = rng.uniform(0.5, 1.0, size=n_points)
    return img.reshape(rows, cols)


def rank_consistent_kspace(rows: int, cols: int, layout: CoilLayout | None = None,
                           seed: int = 7, n_points: int = 2, line_axis: int = 1) -> KSpaceGrid:
    layout = three_coil_layout() if layout is None else layout
    stack = simulate_coils(point_source_image(rows, cols, seed, n_points), layout, line_axis)
    return to_kspace_with_noise(stack, layout.noiseless())
