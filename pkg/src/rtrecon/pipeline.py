"""End-to-end flow: mask -> undersample -> GRAPPA -> compress -> magnitudes -> enhancer.

Default order fills on the physical coils and then compresses
(``compress_first=False``); the reverse order is available as a flag.

Baselines reported next to the enhanced image:
  zero_filled  RSS of the undersampled physical-coil images
  grappa       RSS of the GRAPPA-filled coil images (physical coils when
               filling first, virtual coils otherwise)
The network output lives on the [0, 1] range-normalized scale; it is mapped
back with the min/max of the RSS of its own input channels, the only
intensity scale available at inference time.
"""
from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .augment import DEFAULT_RECIPE, augment_dataset, parse_recipe
from .coilcomp import CompressionMatrix, apply_compression, fit_compression
from .dataset import TrainingPair, normalize, range_scale
from .enhancer.network import NetworkConfig, UNet
from .enhancer.training import TrainConfig, train
from .errors import RtReconError, ValidationError
from .grappa import GrappaConfig, GrappaKernelSet, fill, grappa_reconstruct
from .grid import KSpaceGrid, ifft2, rss, rss_combine
from .loss import LossWeights
from .metrics import CANNY_SIGMA, MetricsReport, evaluate
from .phantom import PhantomSlice, generate_dataset, rt_layout
from .sampling import (CONVENTIONAL, NONUNIFORM, SamplingMask, apply_mask,
                       make_conventional_mask, make_mask)

log = logging.getLogger(__name__)

METHODS = ("enhanced", "grappa", "zero_filled")


@dataclass(frozen=True)
class PipelineConfig:
    rows: int = 64
    cols: int = 48
    n_slices: int = 20
    n_coils: int = 12
    phantom_seed: int = 7
    line_axis: int = 1
    mask_profile: str = NONUNIFORM
    mask_seed: int = 7
    n_virtual: int = 2
    compress_first: bool = False
    complex_input: bool = False   # real and imaginary parts as channels instead of magnitudes
    augment_seed: int = 7
    recipe: tuple = DEFAULT_RECIPE
    test_fraction: float = 0.25
    canny_sigma: float = CANNY_SIGMA
    grappa: GrappaConfig = field(default_factory=GrappaConfig)
    net: NetworkConfig = field(default_factory=NetworkConfig)
    train: TrainConfig = field(default_factory=lambda: TrainConfig(batch_size=8, max_epochs=30))
    loss: LossWeights = field(default_factory=LossWeights)
    data_dir: str = ""

    def __post_init__(self):
        if self.mask_profile not in (NONUNIFORM, CONVENTIONAL):
            raise ValidationError(f"unknown mask profile {self.mask_profile!r}")
        if self.net.input_channels != self.n_channels:
            raise ValidationError(f"net.input_channels ({self.net.input_channels}) must equal "
                                  f"{self.n_channels} for n_virtual={self.n_virtual}, "
                                  f"complex_input={self.complex_input}")
        if not 1 <= self.n_virtual <= self.n_coils:
            raise ValidationError("n_virtual must be in [1, n_coils]")
        if not 0 < self.test_fraction < 1:
            raise ValidationError("test_fraction must be in (0, 1)")
        if self.line_axis not in (0, 1):
            raise ValidationError("line_axis must be 0 or 1")

    @property
    def n_channels(self) -> int:
        return self.n_virtual * (2 if self.complex_input else 1)

    @property
    def n_lines(self) -> int:
        return self.cols if self.line_axis == 1 else self.rows

    def to_text(self) -> str:
        return config_to_text(self)

    def config_hash(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()


_SECTIONS = {"grappa": GrappaConfig, "net": NetworkConfig, "train": TrainConfig,
             "loss": LossWeights}
_LOSS_ALIASES = ("alpha", "beta", "gamma", "theta")


def _fmt_value(v) -> str:
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple) and v and isinstance(v[0], tuple):
        return ",".join(f"{k}:{n}" for k, n in v)
    if isinstance(v, tuple):
        return ",".join(_fmt_value(x) for x in v)
    return str(v)


def config_to_text(cfg: PipelineConfig) -> str:
    lines = []
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if f.name in _SECTIONS:
            for sf in fields(v):
                lines.append(f"{f.name}.{sf.name}={_fmt_value(getattr(v, sf.name))}")
        else:
            lines.append(f"{f.name}={_fmt_value(v)}")
    return "\n".join(lines) + "\n"


def _coerce(value: str, default):
    if isinstance(default, bool):
        if value.lower() not in ("true", "false", "1", "0"):
            raise ValidationError(f"expected a boolean, got {value!r}")
        return value.lower() in ("true", "1")
    if default is None or isinstance(default, int) and not isinstance(default, bool):
        if value in ("None", ""):
            return None
        try:
            return int(value)
        except ValueError:
            return float(value)
    if isinstance(default, float):
        return float(value)
    if isinstance(default, tuple):
        if default and isinstance(default[0], tuple):
            return parse_recipe(value.replace(":", "="))
        return tuple(float(x) for x in value.split(","))
    return value


def config_from_text(text: str, base: PipelineConfig | None = None) -> PipelineConfig:
    """Flat ``key=value`` text; section keys use ``section.field``; unknown keys are errors."""
    base = PipelineConfig() if base is None else base
    top, sections = {}, {k: {} for k in _SECTIONS}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValidationError(f"config line {n}: expected key=value")
        key, value = key.strip(), value.strip()
        if key in _LOSS_ALIASES:
            key = "loss." + key
        sec, dot, name = key.partition(".")
        if dot:
            if sec not in _SECTIONS:
                raise ValidationError(f"config line {n}: unknown section {sec!r}")
            sections[sec][name] = value
        else:
            top[key] = value
    names = {f.name for f in fields(PipelineConfig)}
    updates = {}
    for k, v in top.items():
        if k not in names or k in _SECTIONS:
            raise ValidationError(f"unknown config key {k!r}")
        updates[k] = _coerce(v, getattr(base, k))
    for sec, vals in sections.items():
        if not vals:
            continue
        obj = getattr(base, sec)
        own = {f.name for f in fields(obj)}
        bad = set(vals) - own
        if bad:
            raise ValidationError(f"unknown {sec} keys {sorted(bad)}")
        updates[sec] = replace(obj, **{k: _coerce(v, getattr(obj, k)) for k, v in vals.items()})
    if ({"n_virtual", "complex_input"} & set(updates)) and "input_channels" not in sections["net"]:
        net = updates.get("net", base.net)
        factor = 2 if updates.get("complex_input", base.complex_input) else 1
        updates["net"] = replace(net, input_channels=factor * updates.get("n_virtual", base.n_virtual))
    return replace(base, **updates)


def build_mask(cfg: PipelineConfig, profile: str | None = None) -> SamplingMask:
    profile = cfg.mask_profile if profile is None else profile
    if profile == NONUNIFORM:
        return make_mask(cfg.n_lines, cfg.mask_seed)
    return make_conventional_mask(cfg.n_lines, cfg.mask_seed)


def phantom_set(cfg: PipelineConfig) -> list[PhantomSlice]:
    return generate_dataset(cfg.n_slices, cfg.rows, cfg.cols, rt_layout(cfg.n_coils),
                            cfg.phantom_seed, cfg.line_axis)


@dataclass
class PreparedSlice:
    index: int
    reference: np.ndarray     # RSS of the fully sampled coil images
    input: np.ndarray         # [n_virtual, H, W] magnitudes (or [2 n_virtual, H, W] re/im)
    grappa_rss: np.ndarray
    zero_filled_rss: np.ndarray
    kernels: GrappaKernelSet
    compression: CompressionMatrix

    def pair(self) -> TrainingPair:
        return TrainingPair(normalize(self.input)[0], normalize(self.reference)[0], self.index)


def _fill_and_compress(ku: KSpaceGrid, mask: SamplingMask, cfg: PipelineConfig):
    if cfg.compress_first:
        comp = fit_compression(ku, cfg.n_virtual)
        filled, kernels = grappa_reconstruct(apply_compression(ku, comp), mask, cfg.grappa)
        virtual = filled
        grappa_rss = rss_combine(ifft2(filled))
    else:
        filled, kernels = grappa_reconstruct(ku, mask, cfg.grappa)
        comp = fit_compression(filled, cfg.n_virtual)
        virtual = apply_compression(filled, comp)
        grappa_rss = rss_combine(ifft2(filled))
    return virtual, kernels, comp, grappa_rss


def network_channels(images: np.ndarray, complex_input: bool = False) -> np.ndarray:
    """Virtual-coil images -> network channels: magnitudes, or real parts then imaginary parts."""
    if complex_input:
        return np.concatenate([images.real, images.imag], axis=0)
    return np.abs(images)


def prepare_slice(kspace: KSpaceGrid, mask: SamplingMask, cfg: PipelineConfig,
                  index: int = 0) -> PreparedSlice:
    reference = rss_combine(ifft2(kspace))
    ku = apply_mask(kspace, mask)
    virtual, kernels, comp, grappa_rss = _fill_and_compress(ku, mask, cfg)
    inp = network_channels(ifft2(virtual).data, cfg.complex_input)
    return PreparedSlice(index, reference, inp, grappa_rss, rss_combine(ifft2(ku)), kernels, comp)


def prepare_slices(slices, mask: SamplingMask, cfg: PipelineConfig) -> list[PreparedSlice]:
    """Prepare every slice; a failing slice is logged and skipped."""
    out = []
    for s in slices:
        try:
            out.append(prepare_slice(s.kspace, mask, cfg, s.index))
        except RtReconError as e:
            log.error("slice %d skipped: %s", s.index, e)
    return out


def prepare_training_set(prepared: list[PreparedSlice], cfg: PipelineConfig) -> list[TrainingPair]:
    """Normalized pairs expanded by the augmentation recipe (19 per slice by default)."""
    return augment_dataset([p.pair() for p in prepared], cfg.augment_seed, cfg.recipe)


@dataclass
class InferenceResult:
    enhanced: np.ndarray
    grappa_rss: np.ndarray
    input: np.ndarray


def check_artifacts(ku: KSpaceGrid, mask: SamplingMask, kernels: GrappaKernelSet,
                    comp: CompressionMatrix, net: UNet, compress_first: bool = False,
                    complex_input: bool = False) -> None:
    if mask.n_lines != ku.n_lines:
        raise ValidationError(f"mask has {mask.n_lines} lines, k-space {ku.n_lines}")
    if comp.n_physical != ku.n_coils:
        raise ValidationError(f"compression expects {comp.n_physical} coils, data has {ku.n_coils}")
    fill_coils = comp.n_virtual if compress_first else ku.n_coils
    for geom, w in kernels.kernels.items():
        if w.shape[0] != fill_coils or w.shape[1] != fill_coils:
            raise ValidationError(f"kernel {geom} is for {w.shape[0]} coils, "
                                  f"fill runs on {fill_coils}")
    channels = comp.n_virtual * (2 if complex_input else 1)
    if net.config.input_channels != channels:
        raise ValidationError(f"network takes {net.config.input_channels} channels, "
                              f"compression yields {channels}")


def infer(ku: KSpaceGrid, mask: SamplingMask, kernels: GrappaKernelSet, comp: CompressionMatrix,
          net: UNet, compress_first: bool = False, complex_input: bool = False) -> InferenceResult:
    check_artifacts(ku, mask, kernels, comp, net, compress_first, complex_input)
    if compress_first:
        virtual = fill(apply_compression(ku, comp), mask, kernels)
        grappa_rss = rss_combine(ifft2(virtual))
    else:
        filled = fill(ku, mask, kernels)
        virtual = apply_compression(filled, comp)
        grappa_rss = rss_combine(ifft2(filled))
    inp = network_channels(ifft2(virtual).data, complex_input)
    xn, _ = normalize(inp)
    out = net.predict(xn[None].astype(net.dtype))[0].astype(float)
    scale = range_scale(rss(inp, axis=0))
    enhanced = out * scale.width[0] + scale.lo[0]
    return InferenceResult(enhanced, grappa_rss, inp)


def split_slices(n: int, test_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Seeded test split of slice indices; returns (train, test), each sorted."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), 0x7E57])))
    perm = rng.permutation(n)
    n_test = min(max(1, int(round(test_fraction * n))), n - 1)
    return np.sort(perm[n_test:]), np.sort(perm[:n_test])


@dataclass
class ArmResult:
    profile: str
    mask: SamplingMask
    rows: list[dict]
    net: UNet | None = None
    history: list[dict] = field(default_factory=list)
    prepared: list[PreparedSlice] = field(default_factory=list)


def metric_row(report: MetricsReport, **keys) -> dict:
    row = dict(keys)
    row.update({k: v for k, v in report.as_dict().items() if k != "label"})
    return row


def run_arm(slices: list[PhantomSlice], cfg: PipelineConfig, profile: str | None = None,
            enhance: bool = True) -> ArmResult:
    """Prepare, train on the train split, and evaluate every method on the test split."""
    profile = cfg.mask_profile if profile is None else profile
    mask = build_mask(cfg, profile)
    prepared = prepare_slices(slices, mask, cfg)
    by_index = {p.index: p for p in prepared}
    train_idx, test_idx = split_slices(len(slices), cfg.test_fraction, cfg.phantom_seed)
    train_set = [by_index[slices[i].index] for i in train_idx if slices[i].index in by_index]
    test_set = [by_index[slices[i].index] for i in test_idx if slices[i].index in by_index]
    net, history = None, []
    if enhance:
        pairs = prepare_training_set(train_set, cfg)
        result = train(pairs, cfg.net, cfg.train, cfg.loss)
        net, history = result.net, result.history
    rows = []
    for p in test_set:
        src = next(s for s in slices if s.index == p.index)
        images = {"grappa": p.grappa_rss, "zero_filled": p.zero_filled_rss}
        if net is not None:
            ku = apply_mask(src.kspace, mask)
            images["enhanced"] = infer(ku, mask, p.kernels, p.compression, net,
                                       cfg.compress_first, cfg.complex_input).enhanced
        for method in METHODS:
            if method in images:
                rep = evaluate(images[method], p.reference, cfg.canny_sigma)
                rows.append(metric_row(rep, slice=p.index, arm=profile, method=method))
    return ArmResult(profile, mask, rows, net, history, prepared)


def mean_metric(rows: list[dict], method: str, metric: str = "ssim", arm: str | None = None):
    vals = [r[metric] for r in rows if r["method"] == method and (arm is None or r["arm"] == arm)]
    return float(np.mean(vals)) if vals else float("nan")


def benchmark_masks(slices: list[PhantomSlice], cfg: PipelineConfig, enhance: bool = False) -> dict:
    """Same slices, same seeds, non-uniform vs conventional mask; paired per-slice rows."""
    arms = {p: run_arm(slices, cfg, p, enhance) for p in (NONUNIFORM, CONVENTIONAL)}
    rows = arms[NONUNIFORM].rows + arms[CONVENTIONAL].rows
    methods = [m for m in METHODS if any(r["method"] == m for r in rows)]
    deltas = {m: mean_metric(rows, m, arm=NONUNIFORM) - mean_metric(rows, m, arm=CONVENTIONAL)
              for m in methods}
    return {"rows": rows, "delta_ssim": deltas, "arms": arms}


def run(cfg: PipelineConfig, out_dir, slices: list[PhantomSlice] | None = None) -> dict:
    """Full flow into ``out_dir``; returns a summary. Writes a manifest last."""
    from . import io

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if slices is None:
        slices = load_slices(cfg.data_dir) if cfg.data_dir else phantom_set(cfg)
    arm = run_arm(slices, cfg)
    written = []

    def keep(p):
        written.append(Path(p))
        return p

    text = cfg.to_text()
    io.atomic_write(keep(out / "config.txt"), text)
    io.write_mask(keep(out / "mask.txt"), arm.mask)
    from .enhancer.weights import save_weights
    save_weights(arm.net, keep(out / "weights.bin"), {"config_hash": cfg.config_hash()})
    hist_rows = [{"epoch": h["epoch"], "train_loss": h["train_loss"], "val_loss": h["val_loss"],
                  "lr": h["lr"]} for h in arm.history]
    io.atomic_write(keep(out / "history.csv"), history_csv(hist_rows))
    csv_path, json_path = io.emit_rows(arm.rows, out / "report", ["slice", "arm", "method"])
    keep(csv_path)
    keep(json_path)
    summary = {m: mean_metric(arm.rows, m) for m in METHODS}
    manifest = ["rtrecon-manifest 1", f"version={__version__}",
                f"config_hash={cfg.config_hash()}", f"phantom_seed={cfg.phantom_seed}",
                f"mask_seed={cfg.mask_seed}", f"augment_seed={cfg.augment_seed}",
                f"train_seed={cfg.train.seed}", f"net_seed={cfg.net.seed}"]
    for m, v in summary.items():
        manifest.append(f"mean_ssim.{m}={io.fmt(v)}")
    for p in written:
        manifest.append(f"file {p.name} sha256={io.sha256_file(p)}")
    io.atomic_write(out / "manifest.txt", "\n".join(manifest) + "\n")
    return {"summary": summary, "arm": arm, "out_dir": out}


def history_csv(rows: list[dict]) -> str:
    from .io import fmt

    lines = ["epoch,train_loss,val_loss,lr"]
    lines += [f"{r['epoch']},{fmt(r['train_loss'])},{fmt(r['val_loss'])},{fmt(r['lr'])}"
              for r in rows]
    return "\n".join(lines) + "\n"


def load_slices(data_dir) -> list[PhantomSlice]:
    """Read ``slice_*.hdr`` k-space grids written by the phantom command."""
    from .io import read_kspace

    paths = sorted(Path(data_dir).glob("slice_*.hdr"))
    if not paths:
        raise ValidationError(f"no slice_*.hdr files in {data_dir}")
    out = []
    for i, p in enumerate(paths):
        k = read_kspace(p)
        out.append(PhantomSlice(i, rss_combine(ifft2(k)), k))
    return out
