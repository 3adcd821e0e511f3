import csv
import hashlib
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from shrinkbox.cli import main
from shrinkbox.dataset_io import load_image, parse_labels

EXACT_HEIGHTS = [24, 25, 30, 40, 48, 50, 60, 75, 80, 100, 120, 150]


def exact_dataset(root: Path, k=1200, c=2):
    """Label files whose 2-decimal values lie exactly on d = k/h + c."""
    (root / "labels").mkdir(parents=True)
    for i, h in enumerate(EXACT_HEIGHTS):
        d = k / h + c
        line = (f"Car 0.00 0 0.00 100.00 100.00 {100 + 1.5 * h:.2f} {100 + h:.2f} "
                f"1.50 1.60 3.90 0.00 0.00 {d:.2f} 0.00\n")
        (root / "labels" / f"{i:06d}.txt").write_text(line)
    return root


def tree_digest(root: Path) -> dict:
    return {str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file()}


def cli(*args):
    return subprocess.run([sys.executable, "-m", "shrinkbox", *map(str, args)],
                          capture_output=True, text=True)


def test_fit_exact_dataset_subprocess(tmp_path):
    root = exact_dataset(tmp_path / "ds")
    r = cli("fit", "--dataset", root, "--out", tmp_path / "fit")
    assert r.returncode == 0, r.stderr
    m = json.loads((tmp_path / "fit" / "model.json").read_text())
    assert m["k"] == pytest.approx(1200, rel=1e-9)
    assert m["c"] == pytest.approx(2, abs=1e-9)
    assert m["distance_convention"] == "euclidean"
    assert m["filter"]["classes"] == ["Car"]
    run = json.loads((tmp_path / "fit" / "run.json").read_text())
    assert run["subcommand"] == "fit" and run["argv"][0] == "fit"


def test_fit_train_val_report(tmp_path, synth_root):
    ids = sorted(p.stem for p in (synth_root / "labels").glob("*.txt"))
    (tmp_path / "train.txt").write_text("\n".join(ids[:6]))
    (tmp_path / "val.txt").write_text("\n".join(ids[6:]))
    rc = main(["fit", "--dataset", str(synth_root), "--out", str(tmp_path / "fit"),
               "--train-ids", str(tmp_path / "train.txt"), "--val-ids", str(tmp_path / "val.txt"),
               "--max-occluded", "3"])
    assert rc == 0
    rep = json.loads((tmp_path / "fit" / "fit_report.json").read_text())
    assert rep["train"]["samples"] == 24 and rep["val"]["samples"] == 16
    # labels are rounded to 2 decimals, so the fit is close but not exact
    assert rep["val"]["mae"] < 0.05
    rows = list(csv.DictReader(open(tmp_path / "fit" / "hd_pairs.csv")))
    assert len(rows) == 40 and {r["split"] for r in rows} == {"train", "val"}


@pytest.fixture
def fitted(tmp_path, synth_root):
    assert main(["fit", "--dataset", str(synth_root), "--out", str(tmp_path / "fit"),
                 "--max-occluded", "3"]) == 0
    return tmp_path / "fit" / "model.json"


def test_poison_ratio_zero_checksum_equal(tmp_path, synth_root, fitted):
    out = tmp_path / "p0"
    r = cli("poison", "--dataset", synth_root, "--model", fitted, "--out", out, "--ratio", 0)
    assert r.returncode == 0, r.stderr
    man = json.loads((out / "manifest.json").read_text())
    assert man["records"] == []
    src = tree_digest(synth_root)
    dst = {k: v for k, v in tree_digest(out).items() if k not in ("manifest.json", "run.json")}
    assert src == dst
    assert man["checksums"]["input_labels"] == man["checksums"]["output_labels"]
    assert man["checksums"]["input_images"] == man["checksums"]["output_images"]


def test_poison_full(tmp_path, synth_root, fitted):
    out = tmp_path / "p1"
    assert main(["poison", "--dataset", str(synth_root), "--model", str(fitted),
                 "--out", str(out), "--ratio", "0.5", "--seed", "3", "--max-occluded", "3"]) == 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["summary"]["selected_instances"] == 20
    poisoned_ids = {r["image_id"] for r in man["records"] if r["skipped_reason"] is None}
    clean_frames = {f.image_id: f for f in parse_labels(synth_root / "labels")}
    for fr in parse_labels(out / "labels"):
        a = load_image(synth_root / "images" / f"{fr.image_id}.png")
        b = load_image(out / "images" / f"{fr.image_id}.png")
        if fr.image_id in poisoned_ids:
            assert not np.array_equal(a, b)
        else:
            assert np.array_equal(a, b)
            assert fr == clean_frames[fr.image_id]
    for r in man["records"]:
        lbl = parse_labels(out / "labels" / f"{r['image_id']}.txt")[0]
        got = lbl.objects[r["instance_idx"]].bbox.as_tuple()
        assert got == pytest.approx(r["pois_bbox"], abs=0.005)
        l, t, rr, b = r["trigger_rect"]
        img = load_image(out / "images" / f"{r['image_id']}.png")
        assert img.shape[0] >= b and img.shape[1] >= rr


def _pipeline(tmp_path, synth_root, fitted, tag, threads):
    base = tmp_path / tag
    assert main(["--threads", str(threads), "poison", "--dataset", str(synth_root),
                 "--model", str(fitted), "--out", str(base / "pois"), "--ratio", "0.7",
                 "--seed", "11", "--max-occluded", "3"]) == 0
    man = base / "pois" / "manifest.json"
    assert main(["--threads", str(threads), "simulate", "--manifest", str(man),
                 "--out", str(base / "sim"), "--attack-rate", "0.6", "--height-noise", "0.03",
                 "--center-noise", "0.5", "--seed", "4"]) == 0
    assert main(["simulate", "--manifest", str(man), "--out", str(base / "simclean"),
                 "--attack-rate", "0", "--seed", "4"]) == 0
    assert main(["eval-asr", "--predictions", str(base / "sim"), "--manifest", str(man),
                 "--out", str(base / "asr"), "--tag", "sim"]) == 0
    assert main(["eval-map", "--predictions", str(base / "sim"), "--labels",
                 str(base / "pois" / "labels"), "--out", str(base / "map"), "--tag", "sim",
                 "--poison-ratio", "0.7", "--condition", "pois"]) == 0
    assert main(["eval-impact", "--pred-clean", str(base / "simclean"), "--pred-pois",
                 str(base / "sim"), "--manifest", str(man), "--out", str(base / "impact"),
                 "--tag", "sim"]) == 0
    assert main(["report", str(base / "asr"), str(base / "map"), str(base / "impact"),
                 "--out", str(base / "report")]) == 0
    return base


def test_outputs_independent_of_threads(tmp_path, synth_root, fitted):
    a = _pipeline(tmp_path, synth_root, fitted, "a", 1)
    b = _pipeline(tmp_path, synth_root, fitted, "b", 4)
    da, db = tree_digest(a), tree_digest(b)
    assert da.keys() == db.keys()
    differing = [k for k in da if da[k] != db[k]]
    # run.json echoes output paths, which differ between a/ and b/
    assert all(k.endswith("run.json") for k in differing)
    summary = list(csv.DictReader(open(b / "report" / "summary.csv")))
    assert len(summary) == 1
    row = summary[0]
    assert row["tag"] == "sim" and float(row["poison_ratio"]) == 0.7
    assert 0 <= float(row["asr@0.50"]) <= 1 and "map_pois" in row and "mae_pois" in row


def test_replay_byte_identical(tmp_path, synth_root, fitted):
    out = tmp_path / "p"
    assert main(["poison", "--dataset", str(synth_root), "--model", str(fitted), "--out",
                 str(out), "--ratio", "0.4", "--seed", "5", "--max-occluded", "3"]) == 0
    first = tree_digest(out)
    run_json = tmp_path / "saved_run.json"
    run_json.write_bytes((out / "run.json").read_bytes())
    for p in sorted(out.rglob("*"), reverse=True):
        p.unlink() if p.is_file() else p.rmdir()
    assert main(["--threads", "3", "--replay", str(run_json)]) == 0
    assert tree_digest(out) == first


def test_env_threads(tmp_path, synth_root, fitted, monkeypatch):
    monkeypatch.setenv("SHRINKBOX_THREADS", "2")
    assert main(["poison", "--dataset", str(synth_root), "--model", str(fitted), "--out",
                 str(tmp_path / "p"), "--ratio", "0.2"]) == 0
    monkeypatch.setenv("SHRINKBOX_THREADS", "zero")
    assert main(["poison", "--dataset", str(synth_root), "--model", str(fitted), "--out",
                 str(tmp_path / "q"), "--ratio", "0.2"]) == 2


def test_simulate_attack_rate_one_then_asr(tmp_path, synth_root, fitted):
    assert main(["poison", "--dataset", str(synth_root), "--model", str(fitted), "--out",
                 str(tmp_path / "p"), "--ratio", "1", "--max-occluded", "3"]) == 0
    man = tmp_path / "p" / "manifest.json"
    r = cli("simulate", "--manifest", man, "--out", tmp_path / "sim", "--attack-rate", 1)
    assert r.returncode == 0, r.stderr
    r = cli("eval-asr", "--predictions", tmp_path / "sim", "--manifest", man,
            "--out", tmp_path / "asr")
    assert r.returncode == 0, r.stderr
    rep = json.loads((tmp_path / "asr" / "asr_report.json").read_text())
    assert rep["iou_thr"] == 0.6
    assert rep["matched"] == 40 and rep["unmatched_gt"] == 0
    assert [p["asr"] for p in rep["curve"]] == [1.0] * 10
    rows = list(csv.DictReader(open(tmp_path / "asr" / "asr_curve.csv")))
    assert [float(r["X"]) for r in rows] == [0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95]


def test_external_distance_estimator(tmp_path, synth_root, fitted):
    assert main(["poison", "--dataset", str(synth_root), "--model", str(fitted), "--out",
                 str(tmp_path / "p"), "--ratio", "1", "--max-occluded", "3"]) == 0
    man = tmp_path / "p" / "manifest.json"
    for name, a in (("clean", "0"), ("pois", "1")):
        assert main(["simulate", "--manifest", str(man), "--out", str(tmp_path / name),
                     "--attack-rate", a]) == 0
        d = tmp_path / f"{name}_dist"
        d.mkdir()
        for f in (tmp_path / name).glob("*.txt"):
            rows = [ln.split() for ln in f.read_text().splitlines()]
            # a constant-distance estimator: MAE = mean |30 - d_gt|
            d.joinpath(f.name).write_text("".join(f"{' '.join(r[2:6])} 30.0\n" for r in rows))
    assert main(["eval-impact", "--pred-clean", str(tmp_path / "clean"), "--pred-pois",
                 str(tmp_path / "pois"), "--manifest", str(man), "--out", str(tmp_path / "imp"),
                 "--clean-distances", str(tmp_path / "clean_dist"),
                 "--pois-distances", str(tmp_path / "pois_dist")]) == 0
    rep = json.loads((tmp_path / "imp" / "impact_report.json").read_text())
    m = json.loads(man.read_text())
    expected = sum(abs(30.0 - r["d_gt"]) for r in m["records"]) / len(m["records"])
    assert rep["mae_clean"] == pytest.approx(expected) and rep["mae_pois"] == pytest.approx(expected)


def test_exit_codes(tmp_path, synth_root, fitted):
    assert cli("fit", "--dataset", tmp_path / "nope", "--out", tmp_path / "o").returncode == 2
    assert cli("poison", "--dataset", synth_root, "--model", fitted, "--out", tmp_path / "o",
               "--ratio", "1.5").returncode == 2
    assert cli("bogus").returncode == 2
    bad = tmp_path / "bad"
    (bad / "labels").mkdir(parents=True)
    (bad / "labels" / "000000.txt").write_text("Car 0 0 0 1 2 3\n")
    r = cli("fit", "--dataset", bad, "--out", tmp_path / "o")
    assert r.returncode == 2 and "000000.txt:1" in r.stderr
    # a single distinct height cannot be fitted
    one = tmp_path / "one"
    (one / "labels").mkdir(parents=True)
    (one / "labels" / "000000.txt").write_text(
        "Car 0.00 0 0.00 10.00 10.00 50.00 40.00 1.5 1.6 3.9 0 0 20 0\n" * 2)
    assert cli("fit", "--dataset", one, "--out", tmp_path / "o").returncode == 3
    # empty match set -> degenerate
    assert main(["poison", "--dataset", str(synth_root), "--model", str(fitted), "--out",
                 str(tmp_path / "p"), "--ratio", "1", "--max-occluded", "3"]) == 0
    (tmp_path / "nopred").mkdir()
    assert main(["eval-asr", "--predictions", str(tmp_path / "nopred"), "--manifest",
                 str(tmp_path / "p" / "manifest.json"), "--out", str(tmp_path / "a")]) == 3
