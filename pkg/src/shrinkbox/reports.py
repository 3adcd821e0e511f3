"""JSON/CSV report emission and merging of run directories."""
from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path
from typing import Iterable, Sequence

from .errors import ValidationError

RUN_FILE = "run.json"
ASR_REPORT = "asr_report.json"
AP_REPORT = "ap_report.json"
IMPACT_REPORT = "impact_report.json"


def write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=False) + "\n", encoding="utf-8")


def read_json(path):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"{path}: cannot read JSON: {exc}") from None


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow(["" if v is None else v for v in row])


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def combine_digests(items: Iterable[tuple[str, str]]) -> str:
    h = hashlib.sha256()
    for name, digest in sorted(items):
        h.update(name.encode())
        h.update(bytes.fromhex(digest))
    return h.hexdigest()


def asr_csv(report: dict, path) -> None:
    write_csv(path, ["X", "asr", "successes", "total"],
              ([p["X"], p["asr"], p["successes"], p["total"]] for p in report["curve"]))


def ap_csv(report: dict, path) -> None:
    rows = []
    for cls, c in report["classes"].items():
        for thr, ap in c["ap"].items():
            rows.append([cls, thr, ap, c["n_gt"], c["n_pred"]])
    write_csv(path, ["class", "iou_thr", "ap", "n_gt", "n_pred"], rows)


def _run_key(run_dir: Path, report: dict) -> tuple[str, str]:
    tag = report.get("tag") or run_dir.name
    ratio = report.get("poison_ratio")
    return tag, "" if ratio is None else repr(float(ratio))


def merge_runs(run_dirs: Sequence[Path], out_dir: Path) -> dict:
    """Merge eval run directories into tables keyed by (tag, poisoning ratio).

    Writes ``summary.csv`` (one row per key), ``asr_curves.csv`` and
    ``ap.csv`` (long form).
    """
    summary: dict[tuple[str, str], dict] = {}
    asr_rows, ap_rows = [], []
    xs: set[str] = set()
    ap_cols: set[str] = set()
    for rd in run_dirs:
        rd = Path(rd)
        found = False
        if (rd / ASR_REPORT).is_file():
            rep = read_json(rd / ASR_REPORT)
            key = _run_key(rd, rep)
            row = summary.setdefault(key, {})
            row["matched"] = rep["matched"]
            row["unmatched_gt"] = rep["unmatched_gt"]
            for p in rep["curve"]:
                col = f"asr@{p['X']:.2f}"
                xs.add(col)
                row[col] = p["asr"]
                asr_rows.append([*key, f"{p['X']:.2f}", p["asr"], p["successes"], p["total"]])
            found = True
        if (rd / AP_REPORT).is_file():
            rep = read_json(rd / AP_REPORT)
            key = _run_key(rd, rep)
            cond = rep.get("condition", "clean")
            row = summary.setdefault(key, {})
            row[f"map_{cond}"] = rep["map"]
            ap_cols.add(f"map_{cond}")
            for cls, c in rep["classes"].items():
                col = f"ap_{cond}_{cls}"
                row[col] = c["mean_ap"]
                ap_cols.add(col)
                for thr, ap in c["ap"].items():
                    ap_rows.append([*key, cond, cls, thr, ap])
            found = True
        if (rd / IMPACT_REPORT).is_file():
            rep = read_json(rd / IMPACT_REPORT)
            key = _run_key(rd, rep)
            row = summary.setdefault(key, {})
            row.update(mae_clean=rep["mae_clean"], mae_pois=rep["mae_pois"],
                       mae_ratio=rep["ratio"])
            found = True
        if not found:
            raise ValidationError(f"{rd}: no report files found")
    out_dir.mkdir(parents=True, exist_ok=True)
    cols = (["matched", "unmatched_gt"] + sorted(xs) + sorted(ap_cols)
            + ["mae_clean", "mae_pois", "mae_ratio"])
    cols = [c for c in cols if any(c in r for r in summary.values())]
    write_csv(out_dir / "summary.csv", ["tag", "poison_ratio", *cols],
              ([*k, *(summary[k].get(c) for c in cols)] for k in sorted(summary)))
    write_csv(out_dir / "asr_curves.csv", ["tag", "poison_ratio", "X", "asr", "successes", "total"],
              sorted(asr_rows))
    write_csv(out_dir / "ap.csv", ["tag", "poison_ratio", "condition", "class", "iou_thr", "ap"],
              sorted(ap_rows))
    return {"keys": [list(k) for k in sorted(summary)], "columns": cols}
