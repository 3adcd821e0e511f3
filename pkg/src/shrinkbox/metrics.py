"""Prediction matching, attack success rate and COCO-style AP."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .dataset_io import DONTCARE, Frame, Prediction
from .errors import UndefinedMetricError, ValidationError
from .geometry import BBox, iou
from .poison import PoisonManifest, PoisonRecord

DEFAULT_IOU_THR = 0.6
COCO_THRESHOLDS = tuple(round(0.50 + 0.05 * i, 2) for i in range(10))
DEFAULT_XS = COCO_THRESHOLDS
# i/100 rather than linspace: recall n/N must land in its bin when equal to i/100
RECALL_POINTS = np.arange(101) / 100.0


def prediction_order(p: Prediction):
    return (-p.confidence, p.bbox.as_tuple())


def greedy_match(preds: Sequence[BBox], targets: Sequence[BBox], iou_thr: float,
                 target_rank: Sequence | None = None) -> list[tuple[int, int, float]]:
    """Match already-sorted predictions one-to-one to targets.

    Each prediction in turn takes the unassigned target with the highest
    IoU >= ``iou_thr``; equal IoUs go to the target with the smaller
    ``target_rank`` (default: position in ``targets``).
    Returns ``(pred_index, target_index, iou)`` triples.
    """
    rank = list(range(len(targets))) if target_rank is None else list(target_rank)
    taken = [False] * len(targets)
    out = []
    for pi, pb in enumerate(preds):
        best = None
        for ti, tb in enumerate(targets):
            if taken[ti]:
                continue
            v = iou(pb, tb)
            if v < iou_thr:
                continue
            if best is None or v > best[1] or (v == best[1] and rank[ti] < rank[best[0]]):
                best = (ti, v)
        if best is not None:
            taken[best[0]] = True
            out.append((pi, best[0], best[1]))
    return out


# -- ASR ------------------------------------------------------------------

@dataclass(frozen=True)
class MatchTriple:
    image_id: str
    instance_idx: int
    b_pred: BBox
    b_pois: BBox
    b_clean: BBox
    confidence: float
    iou: float


@dataclass
class MatchResult:
    triples: list[MatchTriple]
    unmatched_records: list[tuple[str, int]]
    unmatched_predictions: int


def match_records(preds: Mapping[str, Sequence[Prediction]], records: Sequence[PoisonRecord],
                  image_ids: Iterable[str], classes: Iterable[str], iou_thr: float,
                  target: Callable[[PoisonRecord], BBox]) -> tuple[list[tuple[PoisonRecord, Prediction, float]], list[PoisonRecord], int]:
    known = set(image_ids)
    missing = sorted(set(preds) - known)
    if missing:
        raise ValidationError(
            f"{len(missing)} prediction image(s) absent from manifest, e.g. {missing[0]!r}")
    classes = set(classes)
    by_image: dict[str, list[PoisonRecord]] = {}
    for r in records:
        by_image.setdefault(r.image_id, []).append(r)
    pairs = []
    unmatched = []
    n_unmatched_preds = 0
    for image_id in sorted(set(by_image) | set(preds)):
        recs = sorted(by_image.get(image_id, []), key=lambda r: r.instance_idx)
        ps = sorted((p for p in preds.get(image_id, ()) if p.class_name in classes),
                    key=prediction_order)
        got = greedy_match([p.bbox for p in ps], [target(r) for r in recs], iou_thr,
                           [r.instance_idx for r in recs])
        hit = set()
        for pi, ti, v in got:
            pairs.append((recs[ti], ps[pi], v))
            hit.add(ti)
        unmatched.extend(r for i, r in enumerate(recs) if i not in hit)
        n_unmatched_preds += len(ps) - len(got)
    return pairs, unmatched, n_unmatched_preds


def match_predictions(preds: Mapping[str, Sequence[Prediction]], manifest: PoisonManifest,
                      iou_thr: float = DEFAULT_IOU_THR, class_filter: str | None = None) -> MatchResult:
    """Match predictions on poisoned images to the manifest's poisoned boxes."""
    classes = manifest.target_classes if class_filter is None else (class_filter,)
    pairs, unmatched, n_up = match_records(
        preds, manifest.active_records, manifest.image_ids, classes, iou_thr,
        lambda r: r.pois_bbox)
    triples = [MatchTriple(r.image_id, r.instance_idx, p.bbox, r.pois_bbox, r.clean_bbox,
                           p.confidence, v) for r, p, v in pairs]
    triples.sort(key=lambda t: (t.image_id, t.instance_idx))
    return MatchResult(triples, [r.key for r in unmatched], n_up)


def success(h_pred: float, h_pois: float, h_clean: float, X: float) -> bool:
    """True when the predicted height is close enough to the poisoned height.

    Strict inequality, so at ``X == 1`` even an exact poisoned-height
    prediction does not count.
    """
    if not (0.0 <= X <= 1.0):
        raise ValidationError(f"similarity threshold must be in [0, 1], got {X}")
    return h_pred < h_pois + (h_clean - h_pois) * (1.0 - X)


def success_count(P: Sequence[MatchTriple], X: float) -> int:
    return sum(success(t.b_pred.height, t.b_pois.height, t.b_clean.height, X) for t in P)


def asr_at(P: Sequence[MatchTriple], X: float) -> float:
    if not P:
        raise UndefinedMetricError("ASR is undefined for an empty match set")
    return success_count(P, X) / len(P)


@dataclass
class ASRCurve:
    points: list[tuple[float, float, int, int]]  # (X, asr, successes, total)

    def asr(self, X: float) -> float:
        for x, a, _, _ in self.points:
            if abs(x - X) < 1e-12:
                return a
        raise KeyError(X)


def asr_curve(P: Sequence[MatchTriple], Xs: Iterable[float] = DEFAULT_XS) -> ASRCurve:
    if not P:
        raise UndefinedMetricError("ASR is undefined for an empty match set")
    pts = []
    for X in sorted(Xs):
        s = success_count(P, X)
        pts.append((X, s / len(P), s, len(P)))
    return ASRCurve(pts)


def asr_report(result: MatchResult, iou_thr: float, Xs: Iterable[float] = DEFAULT_XS) -> dict:
    curve = asr_curve(result.triples, Xs)
    return {
        "iou_thr": iou_thr,
        "matched": len(result.triples),
        "unmatched_gt": len(result.unmatched_records),
        "unmatched_predictions": result.unmatched_predictions,
        "curve": [{"X": x, "asr": a, "successes": s, "total": n} for x, a, s, n in curve.points],
    }


# -- AP -------------------------------------------------------------------

@dataclass
class ClassAP:
    n_gt: int
    n_pred: int
    ap: dict[float, float]
    pr_curves: dict[float, tuple[np.ndarray, np.ndarray]] = field(repr=False, default_factory=dict)

    @property
    def mean(self) -> float:
        return float(np.mean(list(self.ap.values())))


@dataclass
class APResult:
    iou_thresholds: tuple[float, ...]
    per_class: dict[str, ClassAP]

    @property
    def map(self) -> float:
        if not self.per_class:
            return 0.0
        return float(np.mean([c.mean for c in self.per_class.values()]))

    def map_at(self, thr: float) -> float:
        if not self.per_class:
            return 0.0
        return float(np.mean([c.ap[thr] for c in self.per_class.values()]))

    def to_json(self) -> dict:
        return {
            "iou_thresholds": list(self.iou_thresholds),
            "map": self.map,
            "map_per_threshold": {f"{t:.2f}": self.map_at(t) for t in self.iou_thresholds},
            "classes": {
                name: {"n_gt": c.n_gt, "n_pred": c.n_pred, "mean_ap": c.mean,
                       "ap": {f"{t:.2f}": v for t, v in c.ap.items()}}
                for name, c in sorted(self.per_class.items())
            },
        }


def interpolated_ap(tp: np.ndarray, n_gt: int) -> tuple[float, np.ndarray, np.ndarray]:
    """101-point interpolated AP from a confidence-ordered TP indicator."""
    if n_gt == 0:
        raise UndefinedMetricError("AP is undefined without ground truth")
    if tp.size == 0:
        return 0.0, np.zeros(0), np.zeros(0)
    ctp = np.cumsum(tp)
    cfp = np.cumsum(1 - tp)
    recall = ctp / n_gt
    precision = ctp / (ctp + cfp)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, RECALL_POINTS, side="left")
    sampled = np.where(idx < len(envelope), envelope[np.minimum(idx, len(envelope) - 1)], 0.0)
    return float(np.mean(sampled)), precision, recall


def average_precision(preds: Mapping[str, Sequence[Prediction]], gt_frames: Sequence[Frame],
                      iou_thresholds: Iterable[float] = COCO_THRESHOLDS,
                      classes: Iterable[str] | None = None) -> APResult:
    """Per-class AP over the images in ``gt_frames``; mAP averages classes then thresholds.

    DontCare annotations are not scored. Classes default to those present
    in the ground truth.
    """
    thresholds = tuple(iou_thresholds)
    gt_by_image = {fr.image_id: fr for fr in gt_frames}
    missing = sorted(set(preds) - set(gt_by_image))
    if missing:
        raise ValidationError(
            f"{len(missing)} prediction image(s) have no ground truth, e.g. {missing[0]!r}")
    if classes is None:
        classes = sorted({o.class_name for fr in gt_frames for o in fr.objects} - {DONTCARE})
    per_class = {}
    for cls in classes:
        gts = {iid: [o.bbox for o in fr.objects if o.class_name == cls]
               for iid, fr in gt_by_image.items()}
        n_gt = sum(len(v) for v in gts.values())
        if n_gt == 0:
            continue
        ordered = sorted(((iid, p) for iid, ps in preds.items() for p in ps if p.class_name == cls),
                         key=lambda t: (-t[1].confidence, t[1].bbox.as_tuple(), t[0]))
        result = ClassAP(n_gt=n_gt, n_pred=len(ordered), ap={})
        for thr in thresholds:
            taken = {iid: [False] * len(v) for iid, v in gts.items()}
            tp = np.zeros(len(ordered), dtype=np.int64)
            for i, (iid, p) in enumerate(ordered):
                best, best_iou = -1, -1.0
                for gi, g in enumerate(gts[iid]):
                    if taken[iid][gi]:
                        continue
                    v = iou(p.bbox, g)
                    if v >= thr and v > best_iou:
                        best, best_iou = gi, v
                if best >= 0:
                    taken[iid][best] = True
                    tp[i] = 1
            ap, prec, rec = interpolated_ap(tp, n_gt)
            result.ap[thr] = ap
            result.pr_curves[thr] = (prec, rec)
        per_class[cls] = result
    return APResult(thresholds, per_class)
