import json
import subprocess
import sys

import pytest

from lcaunet.cli import main

MICRO_FLAGS = ["--img-size", "64", "--edge-channels", "8", "--body-channels", "8",
               "--heads", "1,2,2,4", "--window", "2", "--fusion-window", "2",
               "--n-train", "4", "--n-val", "2", "--n-test", "2", "--batch-size", "2",
               "--epochs", "1"]


def run(*args):
    return subprocess.run([sys.executable, "-m", "lcaunet.cli", *map(str, args)],
                          capture_output=True, text=True, timeout=600)


def test_usage_errors_exit_1(tmp_path):
    assert run().returncode == 1
    assert run("train", "--bogus").returncode == 1
    bad = tmp_path / "c.yaml"
    bad.write_text("nope: 1\n")
    r = run("train", "--config", bad, "--out-dir", tmp_path)
    assert r.returncode == 1 and "valid keys" in r.stderr
    assert main(["train", "--lr", "-1", "--out-dir", str(tmp_path)]) == 1


def test_train_eval_predict_end_to_end(tmp_path):
    out = tmp_path / "run"
    r = run("train", *MICRO_FLAGS, "--out-dir", out, "--seed", "3")
    assert r.returncode == 0, r.stderr
    summary = json.loads(r.stdout.strip().splitlines()[-1])
    assert summary["epochs"] == 1
    assert json.loads((out / "config.json").read_text())["seed"] == 3
    assert len((out / "log.jsonl").read_text().splitlines()) == 1

    r = run("eval", "--checkpoint", out / "last.pt", "--out-dir", tmp_path / "ev")
    assert r.returncode == 0, r.stderr
    agg = json.loads(r.stdout)
    assert set(agg) == {"image_id", "acc", "dice", "iou", "se", "sp"}
    assert (tmp_path / "ev" / "metrics.jsonl").exists()

    synth = tmp_path / "synth"
    assert run("make-synth", "--n", "3", "--size", "64", "--out-dir", synth).returncode == 0
    r = run("eval", "--checkpoint", out / "last.pt", "--data-dir", synth, "--split", "train",
            "--out-dir", tmp_path / "ev2")
    assert r.returncode == 0, r.stderr

    img = sorted(p for p in synth.glob("*.png") if "_segmentation" not in p.name)[0]
    r = run("predict", "--checkpoint", out / "last.pt", "--out-dir", tmp_path / "pred",
            "--edges", "--overlay", img)
    assert r.returncode == 0, r.stderr
    assert (tmp_path / "pred" / f"{img.stem}_mask.png").exists()
    missing = run("predict", "--checkpoint", out / "last.pt", "--out-dir", tmp_path / "pred",
                  tmp_path / "missing.png")
    assert missing.returncode == 2


def test_runtime_errors_exit_2(tmp_path):
    bad = tmp_path / "bad.pt"
    bad.write_bytes(b"garbage")
    assert run("eval", "--checkpoint", bad).returncode == 2
    r = run("train", "--dataset", "directory", "--data-dir", tmp_path / "empty",
            "--out-dir", tmp_path / "o")
    assert r.returncode == 2


def test_bench_small(tmp_path):
    r = run("bench-attn", "--grids", "7", "14", "--dim", "8", "--reps", "1",
            "--out-dir", tmp_path)
    assert r.returncode == 0, r.stderr
    lines = (tmp_path / "bench_attention.csv").read_text().splitlines()
    assert lines[0].startswith("h,w,tokens,C,window,omega_global,omega_local")
    assert len(lines) == 3
