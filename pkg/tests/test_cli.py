import json
import subprocess
import sys

import numpy as np
import pytest

from hazevae.cli import build_parser, run
from hazevae.scenes import read_png, write_png

SUBCOMMANDS = ["gen-data", "train", "hazify", "dehaze", "eval", "mmd-check", "grad-check"]


def test_gen_data_split(tmp_path, capsys):
    assert run(["gen-data", "--count", "80", "--seed", "7", "--out", str(tmp_path / "data")]) == 0
    doc = json.loads((tmp_path / "data" / "manifest.json").read_text())
    assert (len(doc["train"]), len(doc["test"])) == (60, 20)
    assert "60 train / 20 test" in capsys.readouterr().out


def test_missing_required_flag_is_usage_error(capsys):
    assert run(["gen-data", "--count", "8"]) == 1
    err = capsys.readouterr().err
    assert "usage:" in err and "--out" in err


@pytest.mark.parametrize("argv", [[], ["fly"], ["train", "--data", "d", "--out", "o", "--bogus", "1"],
                                  ["train", "--data", "d", "--out", "o", "--iters", "many"]])
def test_usage_errors_exit_1(argv, capsys):
    assert run(argv) == 1
    assert capsys.readouterr().err


def test_dehaze_missing_checkpoint_names_path(tmp_path, capsys):
    ckpt = tmp_path / "no_such.hzck"
    assert run(["dehaze", "--ckpt", str(ckpt), "--in", str(tmp_path), "--out", str(tmp_path / "o")]) == 2
    assert str(ckpt) in capsys.readouterr().err


def test_runtime_error_on_bad_dataset(tmp_path, capsys):
    assert run(["train", "--data", str(tmp_path / "none"), "--out", str(tmp_path / "run"), "--iters", "1"]) == 2
    assert "none" in capsys.readouterr().err


@pytest.mark.parametrize("name", SUBCOMMANDS)
def test_help_lists_defaults(name, capsys):
    assert run([name, "--help"]) == 0
    out = capsys.readouterr().out
    parser = build_parser()
    sub = parser._subparsers._group_actions[0].choices[name]
    for action in sub._actions:
        if action.option_strings and action.dest != "help":
            assert action.option_strings[0] in out
            if action.default not in (None, False) and action.help:
                assert "(default:" in out


def test_train_flag_defaults(capsys):
    a = build_parser().parse_args(["train", "--data", "d", "--out", "o"])
    assert (a.lr, a.beta1, a.beta2) == (1e-4, 0.5, 0.999)
    assert (a.lambda_m, a.lambda_adv, a.lambda_recon) == (0.01, 1.0, 10.0)
    assert (a.iters, a.ckpt_every, a.buffer, a.latent_dim) == (2000, 500, 64, 8)
    run(["train", "--help"])
    out = " ".join(capsys.readouterr().out.split())
    for val in ("0.0001", "0.5", "0.999", "0.01", "10.0", "2000", "500", "64"):
        assert f"(default: {val})" in out


def test_mmd_check(capsys):
    assert run(["mmd-check"]) == 0
    assert "4/4 checks passed" in capsys.readouterr().out


def test_grad_check_summary(capsys):
    assert run(["grad-check"]) == 0
    out = capsys.readouterr().out
    assert "checks passed" in out and "FAIL" not in out


def test_pipeline_end_to_end(tmp_path, capsys):
    data, runs = tmp_path / "data", tmp_path / "run"
    assert run(["gen-data", "--count", "8", "--seed", "1", "--size", "16", "--out", str(data)]) == 0
    assert run(["train", "--data", str(data), "--out", str(runs), "--iters", "4", "--ckpt-every", "2",
                "--log-every", "2", "--latent-dim", "4", "--buffer", "4"]) == 0
    out = capsys.readouterr().out
    assert "iter      2" in out and "iter      4" in out
    ckpt = str(runs / "final.hzck")

    for direction in ("dehazing", "synthesis"):
        rep = tmp_path / f"{direction}.csv"
        assert run(["eval", "--ckpt", ckpt, "--data", str(data), "--direction", direction,
                    "--report", str(rep), "--triptychs", str(tmp_path / "tri")]) == 0
        assert rep.read_text().startswith("file,psnr,ssim")

    src = data / "hazy"
    assert run(["dehaze", "--ckpt", ckpt, "--in", str(src), "--out", str(tmp_path / "clean")]) == 0
    outs = sorted((tmp_path / "clean").glob("*.png"))
    assert len(outs) == 8 and read_png(outs[0]).shape == (16, 16, 3)

    one = data / "clear" / "000000.png"
    for k in range(2):
        assert run(["hazify", "--ckpt", ckpt, "--in", str(one), "--out", str(tmp_path / f"h{k}.png"),
                    "--seed", "3"]) == 0
    assert (tmp_path / "h0.png").read_bytes() == (tmp_path / "h1.png").read_bytes()
    assert run(["hazify", "--ckpt", ckpt, "--in", str(one), "--out", str(tmp_path / "d.png"),
                "--deterministic"]) == 0

    wrong = tmp_path / "big.png"
    write_png(wrong, np.zeros((20, 20, 3)))
    assert run(["dehaze", "--ckpt", ckpt, "--in", str(wrong), "--out", str(tmp_path / "x.png")]) == 2
    assert "big.png" in capsys.readouterr().err


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "hazevae", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and "hazevae" in proc.stdout
