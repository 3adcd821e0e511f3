"""Distance-estimation damage caused by shrunken detections."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Protocol, Sequence

from .dataset_io import Prediction
from .distance_model import InverseHeightModel
from .errors import EstimatorError, ParseError, UndefinedMetricError, ValidationError
from .geometry import BBox
from .metrics import DEFAULT_IOU_THR, match_records
from .poison import PoisonManifest

ASSOCIATION_TOL_PX = 0.5


class DistanceEstimator(Protocol):
    def __call__(self, image_id: str, bbox: BBox, class_name: str) -> float: ...


class ModelEstimator:
    """Built-in estimator: the inverse height model applied to the box height."""

    def __init__(self, model: InverseHeightModel):
        self.model = model

    def __call__(self, image_id: str, bbox: BBox, class_name: str) -> float:
        return self.model.estimate(bbox.height)


class FileDistanceEstimator:
    """Distances computed elsewhere, one file per image.

    Lines are ``left top right bottom distance_m``. A query box is associated
    with the stored box whose coordinates all lie within 0.5 px; the closest
    such box (max coordinate difference) wins.
    """

    def __init__(self, table: Mapping[str, list[tuple[BBox, float]]]):
        self.table = dict(table)

    @classmethod
    def from_dir(cls, directory) -> "FileDistanceEstimator":
        d = Path(directory)
        if not d.is_dir():
            raise ValidationError(f"distance directory not found: {d}")
        table = {}
        names = ("left", "top", "right", "bottom", "distance_m")
        for f in sorted(d.glob("*.txt")):
            rows = []
            for i, line in enumerate(f.read_text(encoding="utf-8").splitlines(), start=1):
                toks = line.split()
                if not toks:
                    continue
                if len(toks) != 5:
                    raise ParseError(f, i, "line", f"expected 5 fields, got {len(toks)}")
                try:
                    vals = [float(t) for t in toks]
                except ValueError:
                    raise ParseError(f, i, names[0], "non-numeric field") from None
                try:
                    rows.append((BBox(*vals[:4]), vals[4]))
                except ValidationError as exc:
                    raise ParseError(f, i, "bbox", str(exc)) from None
            table[f.stem] = rows
        return cls(table)

    def __call__(self, image_id: str, bbox: BBox, class_name: str) -> float:
        best = None
        for box, dist in self.table.get(image_id, ()):
            diff = max(abs(a - b) for a, b in zip(box.as_tuple(), bbox.as_tuple()))
            if diff <= ASSOCIATION_TOL_PX and (best is None or diff < best[0]):
                best = (diff, dist)
        if best is None:
            raise EstimatorError(f"no stored distance for box {bbox.as_tuple()} in {image_id}")
        return best[1]


@dataclass
class ImpactRow:
    image_id: str
    instance_idx: int
    d_gt: float
    d_hat_clean: float | None = None
    d_hat_pois: float | None = None


@dataclass
class RunStats:
    matched: int = 0
    unmatched: int = 0
    estimator_failures: int = 0
    abs_errors: list[float] = field(default_factory=list, repr=False)

    @property
    def mae(self) -> float:
        if not self.abs_errors:
            raise UndefinedMetricError("MAE is undefined: no matched instance with an estimate")
        return math.fsum(self.abs_errors) / len(self.abs_errors)


@dataclass
class ImpactReport:
    clean: RunStats
    pois: RunStats
    rows: list[ImpactRow]
    iou_thr: float

    @property
    def mae_clean(self) -> float:
        return self.clean.mae

    @property
    def mae_pois(self) -> float:
        return self.pois.mae

    @property
    def ratio(self) -> float | None:
        return None if self.mae_clean == 0 else self.mae_pois / self.mae_clean

    def to_json(self) -> dict:
        def stats(s: RunStats):
            return {"matched": s.matched, "unmatched": s.unmatched,
                    "estimator_failures": s.estimator_failures, "mae": s.mae}
        return {"iou_thr": self.iou_thr, "mae_clean": self.mae_clean,
                "mae_pois": self.mae_pois, "ratio": self.ratio,
                "clean_run": stats(self.clean), "pois_run": stats(self.pois)}


def _score_run(preds, manifest, estimator, iou_thr, target, rows, attr) -> RunStats:
    pairs, unmatched, _ = match_records(preds, manifest.active_records, manifest.image_ids,
                                        manifest.target_classes, iou_thr, target)
    st = RunStats(unmatched=len(unmatched))
    for rec, pred, _ in pairs:
        st.matched += 1
        try:
            d_hat = float(estimator(rec.image_id, pred.bbox, pred.class_name))
        except (EstimatorError, ValidationError):
            st.estimator_failures += 1
            continue
        if not (math.isfinite(d_hat) and d_hat > 0):
            st.estimator_failures += 1
            continue
        setattr(rows[rec.key], attr, d_hat)
        st.abs_errors.append(abs(d_hat - rec.d_gt))
    return st


def evaluate_impact(preds_clean_run: Mapping[str, Sequence[Prediction]],
                    preds_pois_run: Mapping[str, Sequence[Prediction]],
                    manifest: PoisonManifest, estimator: DistanceEstimator,
                    iou_thr: float = DEFAULT_IOU_THR,
                    estimator_pois: DistanceEstimator | None = None) -> ImpactReport:
    """MAE against clean ground-truth distance for trigger-absent and trigger-present runs.

    The clean run is matched to clean boxes and the poisoned run to poisoned
    boxes. Unmatched instances and estimator failures are excluded and
    counted.
    """
    rows = {r.key: ImpactRow(r.image_id, r.instance_idx, r.d_gt) for r in manifest.active_records}
    clean = _score_run(preds_clean_run, manifest, estimator, iou_thr,
                       lambda r: r.clean_bbox, rows, "d_hat_clean")
    pois = _score_run(preds_pois_run, manifest, estimator_pois or estimator, iou_thr,
                      lambda r: r.pois_bbox, rows, "d_hat_pois")
    kept = [r for r in rows.values() if r.d_hat_clean is not None or r.d_hat_pois is not None]
    kept.sort(key=lambda r: (r.image_id, r.instance_idx))
    report = ImpactReport(clean, pois, kept, iou_thr)
    _ = (report.mae_clean, report.mae_pois)  # raise early when undefined
    return report
