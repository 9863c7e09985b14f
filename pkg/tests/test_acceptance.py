"""Acceptance criteria, one test per criterion.

Each test records a PASS/FAIL line (shown in the terminal summary) before
asserting. The end-to-end criteria share module-scoped runs.
"""
import time
from fractions import Fraction

import numpy as np
import pytest

from conftest import acceptance_line, numeric_grad, rel_err
from grappa_oracle import oracle_fill
from nets import analytic_input_grad, param_fd, scalar_loss
from test_loss import loop_ssim
from test_metrics import brute_hausdorff, loop_psnr

from rtrecon import io
from rtrecon.augment import augment_dataset, build_plan
from rtrecon.cli import main as cli_main
from rtrecon.coilcomp import apply_compression, energy_profile, fit_compression, retained_energy
from rtrecon.dataset import TrainingPair
from rtrecon.enhancer import NetworkConfig
from rtrecon.enhancer.layers import (AvgPool2, ConvBlock, Conv2d, MaxPool2, NormActDrop,
                                     Residual, Upsample2)
from rtrecon.enhancer.training import TrainConfig, train
from rtrecon.enhancer.weights import encode_weights
from rtrecon.grappa import (GrappaConfig, GrappaKernelSet, calibrate, enumerate_geometries, fill,
                            grappa_reconstruct)
from rtrecon.grid import KSpaceGrid, ifft2c, rss_combine
from rtrecon.loss import (FeatureExtractor, LossWeights, composite_loss, content_loss, l1_loss,
                          ssim)
from rtrecon.metrics import PSNR_INF, dice, hausdorff, nmse, psnr
from rtrecon.phantom import generate_slice, rank_consistent_kspace, rt_layout
from rtrecon.pipeline import (CONVENTIONAL, NONUNIFORM, PipelineConfig, benchmark_masks,
                              build_mask, mean_metric, phantom_set, prepare_slices, run)
from rtrecon.sampling import (SamplingMask, apply_mask, make_conventional_mask, make_mask,
                              mask_stats)

pytestmark = pytest.mark.acceptance


# 1. mask arithmetic

def test_criterion_1_mask_arithmetic():
    t0 = time.perf_counter()
    m = make_mask(192, 7)
    s = mask_stats(m)
    c = make_conventional_mask(192, 7)
    dt = time.perf_counter() - t0
    accel = Fraction(192, m.acquired)
    ok = (s["center_count"] == 19 and s["left_section_counts"] == [8, 4, 2, 1]
          and s["right_section_counts"] == [8, 4, 2, 1] and m.acquired == 49
          and round(float(accel), 2) == 3.92 and c.acquired == 48 and dt < 1.0)
    acceptance_line(1, "mask arithmetic", ok,
                    f"center {s['center_count']}, sides {s['left_section_counts']}/"
                    f"{s['right_section_counts']}, total {m.acquired}, R={float(accel):.4f}, "
                    f"conventional {c.acquired}, {dt * 1e3:.1f} ms")
    assert ok


# 2. augmentation expansion

def test_criterion_2_augmentation_expansion():
    gen = np.random.default_rng(2)
    pairs = [TrainingPair(gen.random((2, 64, 48)), gen.random((64, 48)), i) for i in range(100)]
    t0 = time.perf_counter()
    out = augment_dataset(pairs, 7)
    dt = time.perf_counter() - t0
    per_pair = len(build_plan(7))
    ok = len(out) == 19 * 100 and per_pair * 4492 == 85348 and dt < 60
    acceptance_line(2, "augmentation expansion", ok,
                    f"100 -> {len(out)} pairs, 4492 -> {per_pair * 4492}, {dt:.1f} s")
    assert ok


# 3. GRAPPA fidelity

def test_criterion_3_grappa_fidelity():
    t0 = time.perf_counter()
    k = rank_consistent_kspace(64, 48, seed=7)
    m = make_mask(48, 7)
    masked = apply_mask(k, m)
    filled, _ = grappa_reconstruct(masked, m)
    err = nmse(filled.data, k.data)
    kept = np.array_equal(filled.data[:, :, m.lines], masked.data[:, :, m.lines])

    gen = np.random.default_rng(3)
    kr = KSpaceGrid(gen.standard_normal((4, 32, 24)) + 1j * gen.standard_normal((4, 32, 24)))
    lines = np.arange(24) % 2 == 0
    um = SamplingMask(lines, 0, "custom")
    um_masked = apply_mask(kr, um)
    cfg = GrappaConfig(kx_taps=5, lambda_rel=1e-4)
    ks = calibrate(kr, enumerate_geometries(um, cfg, max_span=24), (0, 24), cfg.lambda_rel, cfg)
    got = fill(um_masked, um, GrappaKernelSet(ks.kernels, ks.lambda_rel, ks.acs,
                                              GrappaConfig(max_span=24), ks.residuals)).data
    want = oracle_fill(um_masked.data, lines, kr.data, (0, 24), 5, 1e-4)
    oracle_err = np.abs(got - want).max() / np.abs(want).max()
    dt = time.perf_counter() - t0
    ok = err < 5e-2 and kept and oracle_err < 1e-8 and dt < 30
    acceptance_line(3, "GRAPPA fidelity", ok,
                    f"NMSE {err:.3g}, acquired identical {kept}, R=2 oracle {oracle_err:.2g}, "
                    f"{dt:.1f} s")
    assert ok


# 4. coil compression

def _eig_profile(data):
    d = data.reshape(data.shape[0], -1)
    ev = np.clip(np.linalg.eigvalsh(d @ d.conj().T)[::-1], 0, None)
    return np.cumsum(ev) / ev.sum()


def test_criterion_4_coil_compression():
    k = generate_slice(0, 64, 48, rt_layout(), 7).kspace
    full = fit_compression(k, 12)
    before = rss_combine(ifft2c(k.data))
    after = rss_combine(ifft2c(apply_compression(k, full).data))
    rss_err = np.abs(after - before).max() / before.max()
    prof_err = np.abs(energy_profile(full) - _eig_profile(k.data)).max()
    sweep = [retained_energy(fit_compression(k, n)) for n in (2, 3, 4, 12)]
    mono = all(b >= a for a, b in zip(sweep, sweep[1:]))
    ok = rss_err < 1e-5 and prof_err < 1e-6 and mono
    acceptance_line(4, "coil compression", ok,
                    f"RSS err {rss_err:.2g}, profile err {prof_err:.2g}, retained "
                    + "/".join(f"{e:.4f}" for e in sweep))
    assert ok


# 5. gradient suite

def _layer_error(layer, x, gen):
    w = gen.standard_normal(layer.forward(x).shape)
    num = numeric_grad(scalar_loss(layer, w), x)
    worst = rel_err(analytic_input_grad(layer, x, w), num)
    floor = 1e-3 * max(np.abs(num).max(), 1e-3)
    for name in dict(layer.named_parameters()):
        an, nu = param_fd(layer, x, w, name)
        worst = max(worst, rel_err(an, nu, floor))
    return worst


def _drops(seed):
    i = 0
    while True:
        yield np.random.Generator(np.random.PCG64([seed, 5, i]))
        i += 1


def test_criterion_5_gradient_suite():
    t0 = time.perf_counter()
    gen = np.random.default_rng(5)
    errors = {}
    x = gen.standard_normal((2, 2, 4, 6))
    errors["conv"] = _layer_error(Conv2d(2, 3, 3, gen), x, gen)
    nad = NormActDrop(2, 0.2, gen)
    nad.act.params["slope"][:] = [0.15, 0.4]
    errors["norm/act/drop"] = _layer_error(nad, gen.standard_normal((3, 2, 4, 4)), gen)
    errors["maxpool"] = _layer_error(MaxPool2(), x, gen)
    errors["avgpool"] = _layer_error(AvgPool2(), x, gen)
    errors["upsample"] = _layer_error(Upsample2(), x, gen)
    errors["conv block"] = _layer_error(ConvBlock(2, 3, 0.1, gen, _drops(1)),
                                        gen.standard_normal((2, 2, 4, 4)), gen)
    errors["residual"] = _layer_error(Residual(ConvBlock(2, 2, 0.1, gen, _drops(2))),
                                      gen.standard_normal((2, 2, 4, 4)), gen)

    p, r = gen.random((16, 16)), gen.random((16, 16))
    ex = FeatureExtractor()
    theta = (0.001, 0.01, 2.0, 4.0)
    _, g = content_loss(p, r, ex, theta)
    errors["content"] = rel_err(g, numeric_grad(lambda z: content_loss(z, r, ex, theta)[0], p))
    _, g = l1_loss(p, r)
    errors["l1"] = rel_err(g, numeric_grad(lambda z: l1_loss(z, r)[0], p))
    res = ssim(p, r)
    errors["ssim"] = rel_err(res.grad, numeric_grad(lambda z: ssim(z, r, gradient=False).mean, p))
    w = LossWeights(alpha=1e-4, beta=1.0, gamma=100.0, theta=theta)
    _, g = composite_loss(p, r, w, ex)
    errors["composite"] = rel_err(g, numeric_grad(lambda z: composite_loss(z, r, w, ex)[0], p))
    dt = time.perf_counter() - t0
    worst = max(errors, key=errors.get)
    ok = all(e < 1e-4 for e in errors.values()) and dt < 300
    acceptance_line(5, "gradient suite", ok,
                    f"{len(errors)} checks, worst {worst} {errors[worst]:.2g}, {dt:.1f} s")
    assert ok, errors


# 6. metric oracles

def _loop_nmse(pred, ref):
    num = den = 0.0
    for a, b in zip(pred.ravel().tolist(), ref.ravel().tolist()):
        num += (a - b) ** 2
        den += b ** 2
    return num / den


def _set_dice(r, y):
    a = {tuple(p) for p in np.argwhere(r)}
    b = {tuple(p) for p in np.argwhere(y)}
    return 2 * len(a & b) / (len(a) + len(b))


def test_criterion_6_metric_oracles():
    gen = np.random.default_rng(6)
    ref = gen.random((40, 32))
    pred = ref + gen.normal(0, 0.1, ref.shape)
    errs = {"ssim": abs(ssim(pred, ref).mean - loop_ssim(pred, ref)),
            "psnr": abs(psnr(pred, ref) - loop_psnr(pred, ref)),
            "nmse": abs(nmse(pred, ref) - _loop_nmse(pred, ref))}
    ra, ya = gen.random((32, 32)) < 0.1, gen.random((32, 32)) < 0.1
    errs["dice"] = abs(dice(ra, ya) - _set_dice(ra, ya))
    oracle_ok = all(e < 1e-8 for e in errs.values())

    one = np.zeros((8, 8)); one[0, 0] = 1
    ref1 = np.clip(gen.random((8, 8)), 0, 1); ref1[0, 0] = 1.0
    r4 = np.zeros(10, bool); y6 = np.zeros(10, bool)
    r4[[0, 1, 2, 3]] = True; y6[[1, 2, 3, 5, 6, 7]] = True
    p0 = np.zeros((8, 8), bool); p0[0, 0] = True
    p1 = np.zeros((8, 8), bool); p1[3, 4] = True
    analytic = [psnr(ref1, ref1) == PSNR_INF,
                abs(psnr(ref1 - 0.1, ref1) - 20.0) < 1e-9,
                nmse(ref1, ref1) == 0, abs(nmse(0 * ref1, ref1) - 1) < 1e-15,
                abs(nmse(2 * ref1, ref1) - 1) < 1e-15,
                dice(p0, p0) == 1, dice(p0, p1) == 0, abs(dice(r4, y6) - 0.6) < 1e-15,
                hausdorff(p0, p1) == 5.0, hausdorff(p0, p0) == 0.0,
                ssim(ref, ref).mean == 1.0]
    hd_exact = 0
    for _ in range(50):
        r = gen.random((32, 32)) < 0.03
        y = gen.random((32, 32)) < 0.03
        r[gen.integers(32), gen.integers(32)] = True
        y[gen.integers(32), gen.integers(32)] = True
        hd_exact += hausdorff(r, y) == brute_hausdorff(r, y)
    ok = oracle_ok and all(analytic) and hd_exact == 50
    acceptance_line(6, "metric oracles", ok,
                    "max oracle diff " + ", ".join(f"{k} {v:.1g}" for k, v in errs.items())
                    + f"; analytic {sum(analytic)}/{len(analytic)}; Hausdorff exact {hd_exact}/50")
    assert ok


# 7. overfit smoke test

def _overfit_once(pairs):
    net = NetworkConfig(depth=2, base_filters=4, input_channels=2, seed=0)
    tc = TrainConfig(batch_size=4, initial_lr=3e-4, max_steps=500, max_epochs=5000,
                     plateau_patience=5000, early_stop_patience=5000, seed=0, dtype="float64")
    return train(pairs, net, tc)


def test_criterion_7_overfit_smoke():
    cfg = PipelineConfig(n_slices=4)
    pairs = [p.pair() for p in prepare_slices(phantom_set(cfg), build_mask(cfg), cfg)]
    t0 = time.perf_counter()
    a = _overfit_once(pairs)
    b = _overfit_once(pairs)
    dt = time.perf_counter() - t0
    ratio = a.step_losses[-1] / a.step_losses[0]
    same = encode_weights(a.net) == encode_weights(b.net)
    ok = len(pairs) == 4 and len(a.step_losses) == 500 and ratio < 0.10 and same
    acceptance_line(7, "overfit smoke test", ok,
                    f"loss {a.step_losses[0]:.4g} -> {a.step_losses[-1]:.4g}, ratio {ratio:.3f} "
                    f"(needs < 0.10), weights identical {same}, {dt:.0f} s for two runs")
    assert ok


# 8-10. end to end

@pytest.fixture(scope="module")
def run_a(tmp_path_factory):
    out = tmp_path_factory.mktemp("run_a")
    t0 = time.perf_counter()
    res = run(PipelineConfig(), out)
    res["seconds"] = time.perf_counter() - t0
    return res


@pytest.fixture(scope="module")
def run_b(tmp_path_factory):
    out = tmp_path_factory.mktemp("run_b")
    assert cli_main(["run", "-o", str(out)]) == 0
    return out


def test_criterion_8_end_to_end_ordering(run_a):
    s = run_a["summary"]
    cfg = PipelineConfig()
    shape_ok = (cfg.n_slices, cfg.phantom_seed, cfg.rows, cfg.cols, cfg.n_coils, cfg.n_virtual) \
        == (20, 7, 64, 48, 12, 2)
    ok = (shape_ok and s["enhanced"] >= s["grappa"] >= s["zero_filled"]
          and run_a["seconds"] < 15 * 60)
    acceptance_line(8, "end-to-end ordering", ok,
                    f"mean SSIM enhanced {s['enhanced']:.4f} >= GRAPPA {s['grappa']:.4f} >= "
                    f"zero-filled {s['zero_filled']:.4f}, {run_a['seconds']:.0f} s")
    assert ok


def test_criterion_9_mask_benchmark(run_a, tmp_path):
    cfg = PipelineConfig()
    slices = phantom_set(cfg)
    bench = benchmark_masks(slices, cfg, enhance=True)
    (tmp_path / "direct").mkdir()
    io.emit_rows(bench["rows"], tmp_path / "direct" / "bench", ["slice", "arm", "method"])
    assert cli_main(["bench-masks", "-o", str(tmp_path / "cli")]) == 0
    same = all((tmp_path / "direct" / f"bench.{ext}").read_bytes()
               == (tmp_path / "cli" / f"bench.{ext}").read_bytes() for ext in ("csv", "json"))
    # the non-uniform arm is the same computation as the plain run
    arm_rows = [r for r in bench["rows"] if r["arm"] == NONUNIFORM]
    matches_run = arm_rows == run_a["arm"].rows
    rows = bench["rows"]
    paired = ({(r["slice"], r["method"]) for r in rows if r["arm"] == NONUNIFORM}
              == {(r["slice"], r["method"]) for r in rows if r["arm"] == CONVENTIONAL})
    nu = mean_metric(rows, "enhanced", arm=NONUNIFORM)
    cv = mean_metric(rows, "enhanced", arm=CONVENTIONAL)
    g_nu = mean_metric(rows, "grappa", arm=NONUNIFORM)
    g_cv = mean_metric(rows, "grappa", arm=CONVENTIONAL)
    ok = same and matches_run and paired and nu >= cv - 0.005
    acceptance_line(9, "mask-vs-mask benchmark", ok,
                    f"enhanced SSIM non-uniform {nu:.4f} vs conventional {cv:.4f} "
                    f"(GRAPPA {g_nu:.4f} vs {g_cv:.4f}), reports identical {same}, "
                    f"arm matches run {matches_run}")
    assert ok


def test_criterion_10_reproducibility(run_a, run_b):
    a = run_a["out_dir"]
    names = ["manifest.txt", "report.csv", "report.json", "weights.bin", "history.csv",
             "config.txt", "mask.txt"]
    diff = [n for n in names if (a / n).read_bytes() != (run_b / n).read_bytes()]
    ok = not diff
    acceptance_line(10, "reproducibility", ok,
                    "manifest, reports and weights bit-identical" if ok else f"differ: {diff}")
    assert ok
