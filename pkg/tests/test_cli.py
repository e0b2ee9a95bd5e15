import json
import subprocess
import sys

import numpy as np
import pytest

from dpssm import io
from dpssm.cli import main
from dpssm.degradation import make_clean_images

SMALL = {"widths": [4, 8, 16], "state_dim": 4, "d_emb": 16, "extractor_width": 4}


@pytest.fixture
def images(tmp_path):
    d = tmp_path / "in"
    d.mkdir()
    for i, img in enumerate(make_clean_images(2, 16, 0)):
        io.write_pnm(d / f"img{i}.ppm", img)
    return d


def _cfg(tmp_path, **extra):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps({**SMALL, **extra}))
    return str(p)


def test_degrade_identity_recipe_is_byte_equal(tmp_path, images):
    cfg = _cfg(tmp_path, recipes=[{"label": "none"}], count=2)
    out = tmp_path / "out"
    assert main(["degrade", "--config", cfg, "--in", str(images), "--out", str(out)]) == 0
    man = json.loads((out / "manifest.json").read_text())
    for e in man["samples"]:
        assert (out / e["file"]).read_bytes() == (images / e["source"]).read_bytes()


def test_degrade_deterministic(tmp_path, images):
    runs = []
    for k in range(2):
        out = tmp_path / f"o{k}"
        assert main(["degrade", "--in", str(images), "--out", str(out), "--seed", "5"]) == 0
        runs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
    assert runs[0] == runs[1]


def test_exit_codes(tmp_path, images, capsys):
    empty = tmp_path / "empty"
    empty.mkdir()
    assert main(["degrade", "--in", str(empty), "--out", str(tmp_path / "x")]) == 3
    assert main(["degrade", "--in", str(tmp_path / "nope"), "--out", str(tmp_path / "x")]) == 3
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"widths": "wide"}))
    assert main(["degrade", "--config", str(bad), "--in", str(images), "--out", str(tmp_path / "x")]) == 2
    assert main(["no-such-command"]) == 2
    w = tmp_path / "w.bin"
    w.write_bytes(b"NOTDPM" + b"\0" * 16)
    assert main(["restore", "--weights", str(w), "--in", str(images / "img0.ppm"), "--out", str(tmp_path / "r.ppm")]) == 4
    assert main(["restore", "--weights", str(tmp_path / "missing.bin"), "--in", str(images / "img0.ppm"),
                 "--out", str(tmp_path / "r.ppm")]) == 3


def test_restore_identity_and_shape_error(tmp_path, images, capsys):
    w = tmp_path / "w.dpmw"
    assert main(["init-weights", "--config", _cfg(tmp_path), "--out", str(w)]) == 0
    before = w.read_bytes()
    img = images / "img0.ppm"
    capsys.readouterr()
    assert main(["restore", "--weights", str(w), "--in", str(img), "--out", str(tmp_path / "r.ppm"),
                 "--metrics", str(img)]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["psnr_db"] == 100.0 and rep["ssim"] == 1.0 and rep["image_id"] == "img0"
    assert (tmp_path / "r.ppm").read_bytes() == img.read_bytes()
    assert w.read_bytes() == before
    odd = tmp_path / "odd.ppm"
    io.write_pnm(odd, np.zeros((3, 10, 10)))
    assert main(["restore", "--weights", str(w), "--in", str(odd), "--out", str(tmp_path / "o.ppm")]) == 5


def test_report_commands(tmp_path, images, capsys):
    out = tmp_path / "b"
    assert main(["bench-scan", "--L", "1,64", "--dinner", "2", "--N", "2", "--threads", "1,2", "--out", str(out)]) == 0
    rows = io.read_csv(out / "bench_scan.csv")
    assert {r["method"] for r in rows} == {"sequential", "parallel"}
    assert (out / "bench_scan.png").exists() and (out / "op_counts.json").exists()

    s = tmp_path / "s"
    assert main(["stats-delta", "--config", _cfg(tmp_path), "--count", "7", "--size", "16", "--out", str(s)]) == 0
    assert len(io.read_csv(s / "delta_stats.csv")) > 0 and (s / "delta_stats.png").exists()

    g = tmp_path / "g"
    assert main(["spectrum-gap", "--ref", str(images / "img0.ppm"), "--in", str(images / "img1.ppm"),
                 "--bins", "8", "--out", str(g)]) == 0
    assert len(io.read_csv(g / "spectrum_gap.csv")) == 8


def test_train_toy1d_zero_steps(tmp_path, capsys):
    out = tmp_path / "t"
    assert main(["train-toy1d", "--steps", "0", "--out", str(out)]) == 0
    rep = json.loads((out / "toy1d_report.json").read_text())
    assert rep["mse_modulated"] == rep["mse_fixed"]


def test_grad_check_small(tmp_path, capsys):
    out = tmp_path / "g"
    assert main(["grad-check", "--instances", "3", "--coords", "4", "--out", str(out)]) == 0
    assert json.loads((out / "grad_check.json").read_text())["ok"] is True


def test_console_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "dpssm.cli", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "bench-scan" in r.stdout
