"""End-to-end checks of the vseg executable (path in $VSEG)."""

import filecmp
import json
import os
import subprocess
from pathlib import Path

import pytest

VSEG = os.environ.get("VSEG", "vseg")


def vseg(*args, cwd=None):
    return subprocess.run([VSEG, *map(str, args)], cwd=cwd, capture_output=True, text=True)


def ok(*args):
    r = vseg(*args)
    assert r.returncode == 0, r.stderr
    return r


def test_phantom_is_byte_identical(tmp_path):
    for d in ("a", "b"):
        ok("phantom", "--count", 2, "--size", 32, "--seed", 1, "--out", tmp_path / d)
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert names == sorted(p.name for p in (tmp_path / "b").iterdir())
    assert "manifest.json" in names and "1_maskR.srv" in names
    match, mismatch, errors = filecmp.cmpfiles(tmp_path / "a", tmp_path / "b", names, shallow=False)
    assert mismatch == [] and errors == []


def test_evaluate_identical_masks_gives_unit_dice(tmp_path):
    ok("phantom", "--count", 3, "--size", 16, "--seed", 4, "--semi-min", 2, "--semi-max", 3,
       "--jitter", 1, "--out", tmp_path / "raw")
    ok("preprocess", "--in", tmp_path / "raw", "--out", tmp_path / "gt", "--target", 16, 16, 16, "--margin", 0)
    pred = tmp_path / "pred"
    pred.mkdir()
    for i in range(3):
        (pred / f"{i}_pred.srv").write_bytes((tmp_path / "gt" / f"{i}_mask.srv").read_bytes())
    for flag in ([], ["--micro"]):
        ok("evaluate", "--pred", pred, "--gt", tmp_path / "gt", "--out", tmp_path / "ev", *flag)
        agg = json.loads((tmp_path / "ev" / "aggregate.json").read_text())
        assert agg["n"] == 3
        assert agg["mean"]["dsc"] == 1.0
    reports = json.loads((tmp_path / "ev" / "reports.json").read_text())
    assert [r["id"] for r in reports] == ["0", "1", "2"]


def test_small_pipeline(tmp_path):
    ok("phantom", "--count", 4, "--size", 16, "--seed", 2, "--semi-min", 2, "--semi-max", 3,
       "--jitter", 1, "--out", tmp_path / "raw")
    ok("preprocess", "--in", tmp_path / "raw", "--out", tmp_path / "pre", "--target", 16, 16, 16, "--margin", 0)
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"preset": "desk", "epochs": 2, "train_dir": str(tmp_path / "pre")}))
    r = ok("train", "--config", cfg, "--model-out", tmp_path / "m.vseg", "--history-out", tmp_path / "h.jsonl")
    assert "effective config" in r.stderr
    assert "[time] train" in r.stderr
    lines = (tmp_path / "h.jsonl").read_text().splitlines()
    assert len(lines) == 2
    assert json.loads(lines[0])["test_iou"] is None
    assert (tmp_path / "m.vseg").read_bytes()[:4] == b"VSEG"

    ok("predict", "--model", tmp_path / "m.vseg", "--in", tmp_path / "pre", "--out", tmp_path / "out", "--overlay")
    for i in range(4):
        for suffix in ("_prob.srv", "_pred.srv", "_axial.png", "_coronal.png", "_sagittal.png"):
            assert (tmp_path / "out" / f"{i}{suffix}").exists()
    ok("evaluate", "--pred", tmp_path / "out", "--gt", tmp_path / "pre", "--out", tmp_path / "ev")
    agg = json.loads((tmp_path / "ev" / "aggregate.json").read_text())
    assert 0.0 <= agg["mean"]["dsc"] <= 1.0


def test_usage_errors_exit_2(tmp_path):
    assert vseg().returncode == 2
    assert vseg("frobnicate").returncode == 2
    assert vseg("phantom").returncode == 2  # --out missing
    assert vseg("train").returncode == 2  # no training directory
    cfg = tmp_path / "c.json"
    cfg.write_text('{"epochs": 1, "epochz": 2}')
    r = vseg("train", "--config", cfg, "--train-dir", tmp_path)
    assert r.returncode == 2 and "epochz" in r.stderr


def test_input_errors_exit_3_without_artifacts(tmp_path):
    assert vseg("predict", "--model", tmp_path / "missing.vseg", "--in", tmp_path, "--out", tmp_path / "o").returncode == 3
    ok("phantom", "--count", 1, "--size", 32, "--seed", 1, "--out", tmp_path / "raw")
    # The default margin does not fit a 32^3 phantom into 32^3.
    r = vseg("preprocess", "--in", tmp_path / "raw", "--out", tmp_path / "pre", "--target", 32, 32, 32)
    assert r.returncode == 3
    assert not (tmp_path / "pre").exists()
    bad = tmp_path / "bad.vseg"
    bad.write_bytes(b"NOPE" + bytes(40))
    assert vseg("predict", "--model", bad, "--in", tmp_path / "raw", "--out", tmp_path / "o").returncode == 3
    assert not (tmp_path / "o").exists()


def test_gradcheck_passes():
    r = ok("gradcheck")
    assert "conv3d" in r.stdout
    assert "FAIL" not in r.stdout
