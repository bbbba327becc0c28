import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from xrdseg import pipeline as P
from xrdseg.cli import main
from xrdseg.integration import read_pattern_csv
from xrdseg.io import read_mask


@pytest.fixture()
def root(tmp_path, monkeypatch):
    monkeypatch.setenv("XRDSEG_ROOT", str(tmp_path / "art"))
    monkeypatch.chdir(tmp_path)
    (tmp_path / "cfg.json").write_text(json.dumps({"window": 32, "depth": 3, "epochs": 2, "batch_size": 8}))
    return tmp_path / "art"


def run(*argv):
    return main([str(a) for a in argv])


def test_full_workflow(root):
    assert run("synth", "--archetype", "battery", "--n", 2, "--size", 64, "--seed", 1, "--out", "data") == 0
    assert (root / "data" / "manifest.json").exists()
    assert run("prepare", "--manifest", "data/manifest.json", "--config", "cfg.json", "--out", "store") == 0
    assert run("train", "--store", "store", "--config", "cfg.json", "--epochs", 1, "--out", "ck") == 0
    manifest = json.loads((root / "ck" / "manifest.json").read_text())
    assert manifest["epoch"] == 1 and manifest["window"] == 32

    assert run("predict", "--checkpoint", "ck", "--image", "data/battery-000.image", "--out", "pred") == 0
    assert read_mask(root / "pred").shape == (64, 64)
    assert run("mask-baseline", "--image", "data/battery-000.image", "--out", "basemask") == 0
    assert read_mask(root / "basemask").provenance == "threshold"

    assert run("evaluate", "--manifest", "data/manifest.json", "--checkpoint", "ck", "--out", "unet.json") == 0
    assert run("evaluate", "--manifest", "data/manifest.json", "--baseline", "--out", "base.json") == 0
    assert run("evaluate", "--manifest", "data/manifest.json", "--truth", "--out", "truth.json") == 0
    truth = json.loads((root / "truth.json").read_text())
    assert truth["aggregate"]["recall"] == 1.0
    assert run("compare", "base.json", "base.json", "--out", "cmp.json") == 0
    assert json.loads((root / "cmp.json").read_text())["fp_reduction_percent"] == 0.0

    assert run("integrate", "--image", "data/battery-000.image", "--mask", "pred", "--bins", 50,
               "--out", "pattern.csv") == 0
    assert len(read_pattern_csv(root / "pattern.csv")) == 50


def test_sweep_writes_table(root):
    run("synth", "--n", 2, "--size", 64, "--out", "data")
    assert run("sweep", "--manifest", "data/manifest.json", "--config", "cfg.json", "--epochs", 1,
               "--depths", 2, 3, "--repeats", 1, "--n-train", 1, "--out", "sweep.csv") == 0
    rows = list(csv.reader(open(root / "sweep.csv")))
    assert rows[0] == ["window", "dataset", "depth=2", "depth=3"]
    long = list(csv.DictReader(open(root / "sweep_long.csv")))
    assert sorted(int(r["parameters"]) for r in long) == [6562, 29650]


def test_checkpoint_every(root):
    run("synth", "--n", 1, "--size", 64, "--out", "data")
    run("prepare", "--manifest", "data/manifest.json", "--config", "cfg.json", "--out", "store")
    assert run("train", "--store", "store", "--config", "cfg.json", "--epochs", 3,
               "--checkpoint-every", 1, "--out", "ck") == 0
    assert sorted(p.name for p in (root / "ck").glob("epoch-*")) == ["epoch-0001", "epoch-0002"]
    record = json.loads((root / "ck" / "run.json").read_text())
    assert len(record["epoch_loss"]) == 3


def test_exit_codes(root, tmp_path):
    assert run("train", "--store", "missing", "--out", "x") == 3
    assert run("prepare", "--manifest", "m.json", "--window", 48, "--out", "s") == 2
    (tmp_path / "bad.json").write_text('{"windows": 64}')
    assert run("prepare", "--manifest", "m.json", "--config", "bad.json", "--out", "s") == 2
    assert run("nonsense") == 2


def test_nan_training_exits_with_numeric_code(root):
    cfg = P.TrainConfig(window=16, depth=2, epochs=1)
    store = P.TileStore(np.full((2, 16, 16), np.nan, np.float32), np.zeros((2, 16, 16), np.uint8),
                        ["a", "b"], [(0, 0), (0, 0)], np.array([0, 1]), cfg.to_dict())
    store.save(root / "store")
    assert run("train", "--store", "store", "--window", 16, "--depth", 2, "--epochs", 1, "--out", "ck") == 4


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "xrdseg", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "integrate" in out.stdout
