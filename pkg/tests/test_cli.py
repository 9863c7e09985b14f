import json

import numpy as np
import pytest

from rtrecon import io
from rtrecon.cli import EXIT_IO, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, main


def run_cli(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("data")
    assert main(["phantom", "--slices", "2", "--seed", "7", "-o", str(d)]) == EXIT_OK
    return d


def test_mask_command(tmp_path, capsys):
    code, out, err = run_cli(capsys, "mask", "--lines", 192, "--seed", 7, "-o", tmp_path / "m.txt")
    assert code == EXIT_OK and err == ""
    stats = json.loads(out)
    assert io.read_mask(tmp_path / "m.txt").lines.sum() == 49
    assert stats
    code, out, _ = run_cli(capsys, "mask", "--n-lines", 192, "--conventional",
                           "-o", tmp_path / "c.txt")
    assert code == EXIT_OK
    assert io.read_mask(tmp_path / "c.txt").lines.sum() == 48


def test_usage_errors_exit_1(capsys):
    assert run_cli(capsys, "mask")[0] == EXIT_USAGE
    assert run_cli(capsys, "no-such-command")[0] == EXIT_USAGE
    code, out, err = run_cli(capsys, "compress", "--in", "x.hdr", "-o", "y.hdr")
    assert code in (EXIT_USAGE, EXIT_IO)
    assert out == "" and err


def test_missing_file_exit_2(tmp_path, capsys):
    code, out, err = run_cli(capsys, "recon", "--in", tmp_path / "nope.hdr", "-o", tmp_path / "o.hdr")
    assert code == EXIT_IO and out == "" and "I/O" in err


def test_validation_exit_3(tmp_path, capsys):
    code, _, err = run_cli(capsys, "mask", "--lines", 20, "-o", tmp_path / "m.txt")
    assert code == EXIT_NUMERIC and "n_lines" in err


def test_version_and_help(capsys):
    assert main(["--version"]) == EXIT_OK
    assert "rt-recon" in capsys.readouterr().out
    assert main(["--help"]) == EXIT_OK


def test_recon_undersample_grappa_compress_chain(tmp_path, data_dir, capsys):
    k = data_dir / "slice_0000.hdr"
    assert run_cli(capsys, "mask", "--lines", 48, "--seed", 7, "-o", tmp_path / "m.txt")[0] == 0
    assert run_cli(capsys, "undersample", "--in", k, "--mask", tmp_path / "m.txt",
                   "-o", tmp_path / "u.hdr")[0] == 0
    assert run_cli(capsys, "grappa", "--in", tmp_path / "u.hdr", "--mask", tmp_path / "m.txt",
                   "--kx-taps", 5, "--kernels-out", tmp_path / "k.bin", "-o", tmp_path / "g.hdr")[0] == 0
    code, out, _ = run_cli(capsys, "compress", "--in", tmp_path / "g.hdr", "--virtual", 2,
                           "--matrix-out", tmp_path / "c.bin", "-o", tmp_path / "v.hdr")
    assert code == 0 and json.loads(out)["n_virtual"] == 2
    assert io.read_kspace(tmp_path / "v.hdr").n_coils == 2
    assert run_cli(capsys, "recon", "--in", tmp_path / "g.hdr", "--png", tmp_path / "g.png",
                   "-o", tmp_path / "g_img.hdr")[0] == 0
    assert io.read_image(tmp_path / "g_img.hdr").shape == (64, 48)
    assert (tmp_path / "g.png").exists()


def test_eval_command(tmp_path, capsys, rng):
    ref = rng.random((32, 32))
    io.write_grid(tmp_path / "r.hdr", ref)
    io.write_grid(tmp_path / "p.hdr", ref + 0.01)
    code, out, _ = run_cli(capsys, "eval", "--pred", tmp_path / "p.hdr", "--ref", tmp_path / "r.hdr",
                           "-o", tmp_path / "rep.json")
    assert code == EXIT_OK
    rep = json.loads(out)
    assert rep["nmse"] > 0 and (tmp_path / "rep.csv").exists()
    io.write_grid(tmp_path / "c.hdr", (ref + 0j).astype(np.complex64))
    assert run_cli(capsys, "eval", "--pred", tmp_path / "c.hdr", "--ref", tmp_path / "r.hdr",
                   "-o", tmp_path / "x.json")[0] == EXIT_IO


def test_prepare_augment_train_infer(tmp_path, data_dir, capsys):
    cfg = tmp_path / "p.cfg"
    cfg.write_text("net.depth=2\nnet.base_filters=2\ntrain.batch_size=4\n"
                   "train.max_epochs=1\ntrain.max_steps=2\n")
    assert run_cli(capsys, "prepare", "--data", data_dir, "--config", cfg,
                   "-o", tmp_path / "pairs")[0] == 0
    assert run_cli(capsys, "augment", "--in", tmp_path / "pairs", "-o", tmp_path / "aug")[0] == 0
    assert len(io.read_pairs(tmp_path / "aug")) == 2 * 19
    code, out, _ = run_cli(capsys, "train", "--data", tmp_path / "aug", "--config", cfg,
                           "--history", tmp_path / "h.csv", "-o", tmp_path / "w.bin")
    assert code == 0 and "best_epoch" in json.loads(out)
    assert run_cli(capsys, "mask", "--lines", 48, "--seed", 7, "-o", tmp_path / "m.txt")[0] == 0
    assert run_cli(capsys, "undersample", "--in", data_dir / "slice_0000.hdr",
                   "--mask", tmp_path / "m.txt", "-o", tmp_path / "u.hdr")[0] == 0
    code, _, err = run_cli(capsys, "infer", "--in", tmp_path / "u.hdr", "--mask", tmp_path / "m.txt",
                           "--kernels", tmp_path / "pairs" / "kernels_0000.bin",
                           "--compression", tmp_path / "pairs" / "compression_0000.bin",
                           "--weights", tmp_path / "w.bin", "--grappa-out", tmp_path / "g.hdr",
                           "-o", tmp_path / "e.hdr")
    assert code == 0, err
    assert io.read_image(tmp_path / "e.hdr").shape == (64, 48)


def test_run_and_bench_commands(tmp_path, capsys):
    cfg = tmp_path / "p.cfg"
    cfg.write_text("n_slices=4\nnet.depth=2\nnet.base_filters=2\ntrain.batch_size=4\n"
                   "train.max_epochs=1\ntrain.max_steps=2\n")
    code, out, _ = run_cli(capsys, "run", "--config", cfg, "-o", tmp_path / "run")
    assert code == 0 and "mean_ssim.grappa" in json.loads(out)
    assert (tmp_path / "run" / "manifest.txt").exists()
    code, out, _ = run_cli(capsys, "bench-masks", "--config", cfg, "--no-train",
                           "-o", tmp_path / "bench")
    assert code == 0 and "delta_ssim.grappa" in json.loads(out)
    assert (tmp_path / "bench" / "bench.csv").exists()
    code, _, err = run_cli(capsys, "run", "--config", cfg, "--set", "bogus=1", "-o", tmp_path / "x")
    assert code == EXIT_NUMERIC and "bogus" in err
