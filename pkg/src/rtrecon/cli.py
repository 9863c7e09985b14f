"""``rt-recon`` command line.

Exit codes: 0 success, 1 usage, 2 I/O or file format, 3 numeric/validation.
Requested data goes to stdout; diagnostics go to stderr.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from . import io
from .errors import FormatError, RtReconError

log = logging.getLogger("rtrecon")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _pipeline_config(path, overrides=()):
    from .pipeline import PipelineConfig, config_from_text

    text = Path(path).read_text() if path else ""
    text += "\n" + "\n".join(overrides)
    return config_from_text(text, PipelineConfig())


def _print_json(obj):
    sys.stdout.write(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def cmd_phantom(a):
    from .phantom import generate_dataset, rt_layout, three_coil_layout

    layout = three_coil_layout() if a.coils == 3 and a.layout == "small" else rt_layout(a.coils)
    if a.noiseless:
        layout = layout.noiseless()
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    for s in generate_dataset(a.n_slices, a.rows, a.cols, layout, a.seed, a.line_axis):
        io.write_grid(out / f"slice_{s.index:04d}.hdr", s.kspace)
        io.write_grid(out / f"truth_{s.index:04d}.hdr", s.image)
    log.info("wrote %d slices to %s", a.n_slices, out)


def cmd_mask(a):
    from .sampling import CONVENTIONAL, make_conventional_mask, make_mask, mask_stats

    m = make_conventional_mask(a.n_lines, a.seed) if a.profile == CONVENTIONAL \
        else make_mask(a.n_lines, a.seed)
    io.write_mask(a.out, m)
    _print_json(mask_stats(m))


def cmd_undersample(a):
    from .sampling import apply_mask

    io.write_grid(a.out, apply_mask(io.read_kspace(a.kspace), io.read_mask(a.mask)))


def cmd_grappa(a):
    from .grappa import GrappaConfig, grappa_reconstruct

    cfg = GrappaConfig(kx_taps=a.taps, lambda_rel=a.lambda_rel)
    filled, kernels = grappa_reconstruct(io.read_kspace(a.kspace), io.read_mask(a.mask), cfg)
    io.write_grid(a.out, filled)
    if a.kernels_out:
        io.write_kernels(a.kernels_out, kernels)


def cmd_compress(a):
    from .coilcomp import apply_compression, energy_profile, fit_compression

    k = io.read_kspace(a.kspace)
    if a.matrix:
        m = io.read_compression(a.matrix)
    else:
        if a.n_virtual is None:
            raise UsageError("--n-virtual is required unless --matrix is given")
        m = fit_compression(k, a.n_virtual)
    io.write_grid(a.out, apply_compression(k, m))
    if a.matrix_out:
        io.write_compression(a.matrix_out, m)
    _print_json({"n_virtual": m.n_virtual, "energy_profile": [float(io.fmt(e)) for e in energy_profile(m)]})


def cmd_recon(a):
    from .grid import ifft2, rss_combine

    img = rss_combine(ifft2(io.read_kspace(a.kspace)))
    io.write_grid(a.out, img)
    if a.png:
        io.export_png(img, a.png)


def cmd_prepare(a):
    from .pipeline import load_slices, prepare_slices

    cfg = _pipeline_config(a.config, a.set)
    mask = io.read_mask(a.mask) if a.mask else None
    if mask is None:
        from .pipeline import build_mask
        mask = build_mask(cfg)
    prepared = prepare_slices(load_slices(a.data), mask, cfg)
    out = Path(a.out)
    io.write_pairs(out, [p.pair() for p in prepared])
    for p in prepared:
        io.write_kernels(out / f"kernels_{p.index:04d}.bin", p.kernels)
        io.write_compression(out / f"compression_{p.index:04d}.bin", p.compression)
    log.info("prepared %d pairs in %s", len(prepared), out)


def cmd_augment(a):
    from .augment import DEFAULT_RECIPE, augment_dataset, parse_recipe

    recipe = parse_recipe(Path(a.recipe).read_text()) if a.recipe else DEFAULT_RECIPE
    pairs = io.read_pairs(a.inp)
    out = augment_dataset(pairs, a.seed, recipe)
    io.write_pairs(a.out, out)
    log.info("%d pairs -> %d augmented pairs", len(pairs), len(out))


def cmd_train(a):
    from dataclasses import replace

    from .enhancer.training import train
    from .enhancer.weights import save_weights
    from .pipeline import history_csv

    cfg = _pipeline_config(a.config, a.set)
    tcfg = cfg.train if a.seed is None else replace(cfg.train, seed=a.seed)
    pairs = io.read_pairs(a.data)
    result = train(pairs, cfg.net, tcfg, cfg.loss)
    save_weights(result.net, a.out, {"config_hash": cfg.config_hash()})
    if a.history:
        io.atomic_write(a.history, history_csv(result.history))
    _print_json({"epochs": len(result.history), "best_epoch": result.best_epoch,
                 "final_val_loss": float(io.fmt(result.history[-1]["val_loss"]))})


def cmd_infer(a):
    from .enhancer.weights import load_weights
    from .pipeline import infer

    net, _ = load_weights(a.weights)
    res = infer(io.read_kspace(a.kspace), io.read_mask(a.mask), io.read_kernels(a.kernels),
                io.read_compression(a.compression), net, a.compress_first, a.complex_input)
    io.write_grid(a.out, res.enhanced)
    if a.grappa_out:
        io.write_grid(a.grappa_out, res.grappa_rss)
    if a.png:
        io.export_png(res.enhanced, a.png)


def cmd_eval(a):
    from .metrics import evaluate

    rep = evaluate(io.read_image(a.pred), io.read_image(a.ref), a.sigma, label=Path(a.pred).stem)
    io.emit_report([rep], Path(a.out).with_suffix(""))
    _print_json({k: io._json_value(v) for k, v in rep.as_dict().items()})


def cmd_bench(a):
    from .pipeline import benchmark_masks, load_slices, phantom_set

    cfg = _pipeline_config(a.config, a.set)
    slices = load_slices(cfg.data_dir) if cfg.data_dir else phantom_set(cfg)
    res = benchmark_masks(slices, cfg, enhance=not a.no_train)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    io.emit_rows(res["rows"], out / "bench", ["slice", "arm", "method"])
    _print_json({f"delta_ssim.{m}": float(io.fmt(v)) for m, v in res["delta_ssim"].items()})


def cmd_run(a):
    from .pipeline import run

    cfg = _pipeline_config(a.config, a.set)
    out = a.out or Path("runs") / f"run-{cfg.config_hash()[:12]}"
    res = run(cfg, out)
    log.info("run directory %s", out)
    _print_json({f"mean_ssim.{m}": float(io.fmt(v)) for m, v in res["summary"].items()})


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="rt-recon", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"rt-recon {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("--threads", type=int, default=1,
                   help="worker count; results do not depend on it (processing is sequential)")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def cfg_args(s):
        s.add_argument("--config", help="flat key=value config file")
        s.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override one config key (repeatable)")

    s = sub.add_parser("phantom", help="write synthetic multi-coil k-space slices")
    s.add_argument("--slices", "--n-slices", dest="n_slices", type=int, default=20)
    s.add_argument("--rows", type=int, default=64)
    s.add_argument("--cols", type=int, default=48)
    s.add_argument("--coils", type=int, default=12)
    s.add_argument("--layout", choices=["rt", "small"], default="rt")
    s.add_argument("--line-axis", type=int, choices=[0, 1], default=1)
    s.add_argument("--noiseless", action="store_true")
    s.add_argument("--seed", type=int, default=7)
    s.add_argument("-o", "--out", required=True)
    s.set_defaults(func=cmd_phantom)

    s = sub.add_parser("mask", help="generate a line mask")
    s.add_argument("--lines", "--n-lines", dest="n_lines", type=int, required=True)
    s.add_argument("--profile", choices=["nonuniform_8421", "conventional_uniform"],
                   default="nonuniform_8421")
    s.add_argument("--conventional", dest="profile", action="store_const",
                   const="conventional_uniform", help="same as --profile conventional_uniform")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("-o", "--out", required=True)
    s.set_defaults(func=cmd_mask)

    s = sub.add_parser("undersample", help="zero the lines a mask skips")
    s.add_argument("--in", "--kspace", dest="kspace", required=True)
    s.add_argument("--mask", required=True)
    s.add_argument("-o", "--out", required=True)
    s.set_defaults(func=cmd_undersample)

    s = sub.add_parser("grappa", help="calibrate on the ACS block and fill missing lines")
    s.add_argument("--in", "--kspace", dest="kspace", required=True)
    s.add_argument("--mask", required=True)
    s.add_argument("--kx-taps", "--taps", dest="taps", type=int, default=5)
    s.add_argument("--lambda-rel", type=float, default=1e-4)
    s.add_argument("--kernels-out")
    s.add_argument("-o", "--out", required=True)
    s.set_defaults(func=cmd_grappa)

    s = sub.add_parser("compress", help="SVD virtual-coil compression")
    s.add_argument("--in", "--kspace", dest="kspace", required=True)
    s.add_argument("--virtual", "--n-virtual", dest="n_virtual", type=int)
    s.add_argument("--matrix", help="apply an existing compression matrix")
    s.add_argument("--matrix-out")
    s.add_argument("-o", "--out", required=True)
    s.set_defaults(func=cmd_compress)

    s = sub.add_parser("recon", help="inverse FFT and root-sum-of-squares")
    s.add_argument("--in", "--kspace", dest="kspace", required=True)
    s.add_argument("--png")
    s.add_argument("-o", "--out", required=True)
    s.set_defaults(func=cmd_recon)

    s = sub.add_parser("prepare", help="build (input, reference) pairs from full k-space slices")
    s.add_argument("--data", required=True, help="directory of slice_*.hdr grids")
    s.add_argument("--mask")
    cfg_args(s)
    s.add_argument("-o", "--out", required=True)
    s.set_defaults(func=cmd_prepare)

    s = sub.add_parser("augment", help="expand a pair directory by the augmentation recipe")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--recipe", help="kind=count lines")
    s.add_argument("--seed", type=int, default=7)
    s.add_argument("-o", "--out", required=True)
    s.set_defaults(func=cmd_augment)

    s = sub.add_parser("train", help="train the enhancer on a pair directory")
    s.add_argument("--data", required=True)
    cfg_args(s)
    s.add_argument("--seed", type=int)
    s.add_argument("--history")
    s.add_argument("--out", "-o", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("infer", help="GRAPPA, compress, enhance one undersampled slice")
    s.add_argument("--in", "--kspace", dest="kspace", required=True)
    s.add_argument("--mask", required=True)
    s.add_argument("--kernels", required=True)
    s.add_argument("--compression", required=True)
    s.add_argument("--weights", required=True)
    s.add_argument("--compress-first", action="store_true")
    s.add_argument("--complex-input", action="store_true",
                   help="network was trained on real/imaginary channels")
    s.add_argument("--grappa-out")
    s.add_argument("--png")
    s.add_argument("-o", "--out", required=True)
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("eval", help="SSIM / PSNR / NMSE / edge Dice and Hausdorff")
    s.add_argument("--pred", required=True)
    s.add_argument("--ref", required=True)
    s.add_argument("--sigma", type=float, default=5.0)
    s.add_argument("-o", "--out", required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("bench-masks", help="non-uniform vs conventional mask, paired report")
    cfg_args(s)
    s.add_argument("--no-train", action="store_true", help="baselines only, skip the enhancer")
    s.add_argument("-o", "--out", required=True)
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("run", help="end-to-end pipeline into a run directory")
    cfg_args(s)
    s.add_argument("-o", "--out", help="run directory (default runs/run-<config hash>)")
    s.set_defaults(func=cmd_run)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        sys.stderr.write(f"rt-recon: usage error: {e}\n")
        return EXIT_USAGE
    except SystemExit as e:  # --help / --version
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        args.func(args)
    except UsageError as e:
        sys.stderr.write(f"rt-recon: usage error: {e}\n")
        return EXIT_USAGE
    except (FormatError, OSError) as e:
        sys.stderr.write(f"rt-recon: I/O error: {e}\n")
        return EXIT_IO
    except (RtReconError, ValueError, ArithmeticError) as e:
        sys.stderr.write(f"rt-recon: {type(e).__name__}: {e}\n")
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
