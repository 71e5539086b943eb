import csv
import io
import json
import os

import numpy as np
import pytest
from PIL import Image

from gbmil import cli
from gbmil.bagcore import read_dataset
from gbmil.featex import FEATURE_LENGTH

FAST = ["--svm-c-grid", "1", "--k-init", "10"]


def run(argv, capsys):
    code = cli.main(argv)
    out = capsys.readouterr()
    return code, out.out.strip().splitlines()


@pytest.fixture
def synth_dir(tmp_path, capsys):
    out = tmp_path / "syn"
    code, lines = run(["synth", "--seed", "7", "--n-videos", "6", "--out", str(out)], capsys)
    assert code == 0
    assert lines[-1] == str(out / "manifest.csv")
    return out


def test_synth_writes_dataset(synth_dir):
    ds = read_dataset(str(synth_dir / "manifest.csv"))
    assert len(ds.video_ids) == 6 and len(ds) == 24
    stage = json.loads((synth_dir / "stage.json").read_text())
    assert stage["stage"] == "synth" and "manifest.csv" in stage["outputs"]


def test_evaluate_is_byte_identical(synth_dir, tmp_path, capsys):
    reports = []
    for name in ("r1", "r2"):
        code, lines = run(["evaluate", "--dataset", str(synth_dir / "manifest.csv"),
                           "--method", "mivbgmm", "--seed", "7", "--out",
                           str(tmp_path / name)] + FAST, capsys)
        assert code == 0
        reports.append((tmp_path / name / "report.json").read_bytes())
    assert reports[0] == reports[1]
    rep = json.loads(reports[0])
    assert rep["method"] == "mivbgmm" and "video_level" in rep


def test_evaluate_reads_manifest_path_from_stdin(synth_dir, tmp_path, capsys, monkeypatch):
    monkeypatch.setattr("sys.stdin", io.StringIO(str(synth_dir / "manifest.csv") + "\n"))
    code, _ = run(["evaluate", "--method", "cknn", "--task", "video",
                   "--out", str(tmp_path / "rv")], capsys)
    assert code == 0
    rep = json.loads((tmp_path / "rv" / "report.json").read_text())
    assert "video_level" in rep and "mean" not in rep
    code, lines = run(["report", str(tmp_path / "rv" / "report.json")], capsys)
    assert code == 0 and any("video (mean)" in l for l in lines)


def test_stale_config_is_refused(synth_dir, tmp_path, capsys):
    code, _ = run(["reduce", "--dataset", str(synth_dir / "manifest.csv"),
                   "--pca-variance", "0.9", "--out", str(tmp_path / "red")], capsys)
    assert code == 0
    code, _ = run(["evaluate", "--dataset", str(tmp_path / "red" / "manifest.csv"),
                   "--method", "cknn", "--out", str(tmp_path / "ev")], capsys)
    assert code == cli.EXIT_VALIDATION
    assert not (tmp_path / "ev" / "report.json").exists()


def test_corrupted_output_is_data_error(synth_dir, tmp_path, capsys):
    f = synth_dir / "features.bin"
    raw = bytearray(f.read_bytes())
    raw[-1] ^= 0xFF
    f.write_bytes(bytes(raw))
    code, _ = run(["evaluate", "--dataset", str(synth_dir / "manifest.csv"),
                   "--out", str(tmp_path / "ev")], capsys)
    assert code == cli.EXIT_DATA


def test_missing_dataset_and_bad_config(tmp_path, capsys):
    code, _ = run(["evaluate", "--dataset", str(tmp_path / "nope.csv"),
                   "--out", str(tmp_path / "x")], capsys)
    assert code == cli.EXIT_DATA
    bad = tmp_path / "bad.toml"
    bad.write_text("[svm]\nkernel = 'poly'\n")
    code, _ = run(["synth", "--config", str(bad), "--out", str(tmp_path / "s")], capsys)
    assert code == cli.EXIT_VALIDATION


def _write_images(root, n=3):
    rng = np.random.default_rng(0)
    rows = []
    for i in range(n):
        img = (rng.integers(0, 4, (8, 10, 3)) * 60).astype(np.uint8)
        img = np.kron(img, np.ones((16, 16, 1), dtype=np.uint8))
        mask = np.zeros(img.shape[:2], np.uint8)
        mask[0:128, 0:128] = 255
        Image.fromarray(img).save(root / f"im{i}.png")
        Image.fromarray(mask).save(root / f"mk{i}.png")
        rows.append([f"img{i}", f"vid{i // 2}", "HL"[i % 2], f"im{i}.png", f"mk{i}.png"])
    with open(root / "index.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["image_id", "video_id", "label", "image_file", "mask_file"])
        w.writerows(rows)
    return root / "index.csv"


def test_extract_and_featurize(tmp_path, capsys):
    index = _write_images(tmp_path)
    code, _ = run(["extract-patches", "--index", str(index), "--out", str(tmp_path / "p")], capsys)
    assert code == 0
    summary = json.loads((tmp_path / "p" / "summary.json").read_text())
    assert summary["bags"] == 3 and summary["instances"] == 3 * 9
    code, lines = run(["featurize", "--patches", str(tmp_path / "p"),
                       "--out", str(tmp_path / "f")], capsys)
    assert code == 0
    ds = read_dataset(lines[-1])
    assert ds.feature_dim == FEATURE_LENGTH
    assert [b.size for b in ds] == [9, 9, 9]
    assert ds.bags[0].label == 1 and ds.bags[1].label == -1
    # a changed patch config no longer matches the extracted patches
    code, _ = run(["featurize", "--patches", str(tmp_path / "p"), "--n-colors", "16",
                   "--out", str(tmp_path / "g")], capsys)
    assert code == cli.EXIT_VALIDATION


def test_extract_reports_missing_files(tmp_path, capsys):
    (tmp_path / "index.csv").write_text(
        "image_id,video_id,label,image_file,mask_file\na,v,H,none.png,none.png\n")
    code, _ = run(["extract-patches", "--index", str(tmp_path / "index.csv"),
                   "--out", str(tmp_path / "p")], capsys)
    assert code == cli.EXIT_DATA
