"""Instance selection, box shrinking and trigger placement.

Poisoning runs in two stages. :func:`plan_poisoning` is serial and
deterministic: it filters eligible instances, samples the poisoned subset
and computes every shrunken box. :func:`apply_to_frame` then rewrites one
frame's labels and paints its triggers; frames are independent, so this
stage may run in any order or in parallel.
"""
from __future__ import annotations

import hashlib
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import rng
from .dataset_io import DISTANCE_CONVENTIONS, Frame, format_frame, object_distance
from .distance_model import InverseHeightModel, estimate, invert
from .errors import SingularInversionError, ValidationError
from .geometry import BBox, shrink_about_center
from .trigger import composite, pokeball, trigger_rect

MANIFEST_FORMAT = "shrinkbox-manifest/1"


@dataclass(frozen=True)
class EligibilityFilter:
    classes: tuple[str, ...] = ("Car",)
    require_untruncated: bool = True
    distance_range: tuple[float, float] = (10.0, 60.0)
    max_occluded: int = 1

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(sorted(set(self.classes))))
        object.__setattr__(self, "distance_range", tuple(float(v) for v in self.distance_range))
        lo, hi = self.distance_range
        if not lo < hi:
            raise ValidationError(f"distance range needs min < max, got {self.distance_range}")
        if self.max_occluded not in (0, 1, 2, 3):
            raise ValidationError(f"max_occluded must be in 0..3, got {self.max_occluded}")

    def to_json(self) -> dict:
        return {"classes": list(self.classes),
                "require_untruncated": self.require_untruncated,
                "distance_range": list(self.distance_range),
                "max_occluded": self.max_occluded}

    @classmethod
    def from_json(cls, obj: dict) -> "EligibilityFilter":
        return cls(classes=tuple(obj["classes"]),
                   require_untruncated=bool(obj["require_untruncated"]),
                   distance_range=tuple(obj["distance_range"]),
                   max_occluded=int(obj["max_occluded"]))


@dataclass(frozen=True)
class PoisonParams:
    offset: float = 5.0
    trigger_scale: float = 0.40
    blend: float = 1.0
    ratio: float = 1.0
    seed: int = 0
    min_pois_height: float = 4.0
    size_trigger_by: str = "clean"

    def __post_init__(self):
        if not self.offset > 0:
            raise ValidationError(f"offset must be > 0, got {self.offset}")
        if not (0.0 < self.trigger_scale <= 1.0):
            raise ValidationError(f"trigger_scale must be in (0, 1], got {self.trigger_scale}")
        if not (0.0 < self.blend <= 1.0):
            raise ValidationError(f"blend must be in (0, 1], got {self.blend}")
        if not (0.0 <= self.ratio <= 1.0):
            raise ValidationError(f"ratio must be in [0, 1], got {self.ratio}")
        if self.size_trigger_by not in ("clean", "poisoned"):
            raise ValidationError("size_trigger_by must be 'clean' or 'poisoned'")
        if not (0 <= self.seed < 2 ** 64):
            raise ValidationError("seed must be a 64-bit unsigned integer")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "PoisonParams":
        return cls(**obj)


@dataclass
class PoisonRecord:
    image_id: str
    instance_idx: int
    clean_bbox: BBox
    d_gt: float
    pois_bbox: BBox | None = None
    d_est: float | None = None
    d_proj: float | None = None
    trigger_rect: tuple[int, int, int, int] | None = None
    skipped_reason: str | None = None

    @property
    def skipped(self) -> bool:
        return self.skipped_reason is not None

    @property
    def key(self) -> tuple[str, int]:
        return (self.image_id, self.instance_idx)

    def to_json(self) -> dict:
        return {
            "image_id": self.image_id,
            "instance_idx": self.instance_idx,
            "clean_bbox": list(self.clean_bbox.as_tuple()),
            "pois_bbox": None if self.pois_bbox is None else list(self.pois_bbox.as_tuple()),
            "d_gt": self.d_gt,
            "d_est": self.d_est,
            "d_proj": self.d_proj,
            "trigger_rect": None if self.trigger_rect is None else list(self.trigger_rect),
            "skipped_reason": self.skipped_reason,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "PoisonRecord":
        pb = obj.get("pois_bbox")
        tr = obj.get("trigger_rect")
        return cls(image_id=str(obj["image_id"]), instance_idx=int(obj["instance_idx"]),
                   clean_bbox=BBox(*obj["clean_bbox"]), d_gt=float(obj["d_gt"]),
                   pois_bbox=None if pb is None else BBox(*pb),
                   d_est=obj.get("d_est"), d_proj=obj.get("d_proj"),
                   trigger_rect=None if tr is None else tuple(int(v) for v in tr),
                   skipped_reason=obj.get("skipped_reason"))


@dataclass
class PoisonManifest:
    model: InverseHeightModel
    params: PoisonParams
    filter: EligibilityFilter
    distance_convention: str
    image_ids: list[str]
    records: list[PoisonRecord]
    eligible_count: int = 0
    checksums: dict = field(default_factory=dict)

    @property
    def active_records(self) -> list[PoisonRecord]:
        return [r for r in self.records if not r.skipped]

    @property
    def target_classes(self) -> tuple[str, ...]:
        return self.filter.classes

    def summary(self) -> dict:
        active = self.active_records
        skipped: dict[str, int] = {}
        for r in self.records:
            if r.skipped:
                skipped[r.skipped_reason] = skipped.get(r.skipped_reason, 0) + 1
        return {
            "images_total": len(self.image_ids),
            "eligible_instances": self.eligible_count,
            "selected_instances": len(self.records),
            "poisoned_instances": len(active),
            "poisoned_images": len({r.image_id for r in active}),
            "skipped": dict(sorted(skipped.items())),
            "effective_ratio": (len(active) / self.eligible_count) if self.eligible_count else 0.0,
        }

    def to_json(self) -> dict:
        return {
            "format": MANIFEST_FORMAT,
            "model": {"k": self.model.k, "c": self.model.c},
            "distance_convention": self.distance_convention,
            "params": self.params.to_json(),
            "filter": self.filter.to_json(),
            "summary": self.summary(),
            "image_ids": list(self.image_ids),
            "records": [r.to_json() for r in self.records],
            "checksums": self.checksums,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "PoisonManifest":
        if obj.get("format") != MANIFEST_FORMAT:
            raise ValidationError(f"not a manifest (format={obj.get('format')!r})")
        conv = obj["distance_convention"]
        return cls(
            model=InverseHeightModel(k=obj["model"]["k"], c=obj["model"]["c"],
                                     distance_convention=conv),
            params=PoisonParams.from_json(obj["params"]),
            filter=EligibilityFilter.from_json(obj["filter"]),
            distance_convention=conv,
            image_ids=[str(i) for i in obj["image_ids"]],
            records=[PoisonRecord.from_json(r) for r in obj["records"]],
            eligible_count=int(obj["summary"]["eligible_instances"]),
            checksums=obj.get("checksums", {}),
        )


# -- selection ------------------------------------------------------------

def filter_eligible(frames: Iterable[Frame], flt: EligibilityFilter,
                    convention: str = "euclidean") -> list[tuple[str, int]]:
    if convention not in DISTANCE_CONVENTIONS:
        raise ValidationError(f"unknown distance convention {convention!r}")
    lo, hi = flt.distance_range
    classes = set(flt.classes)
    out = []
    for fr in frames:
        for idx, obj in enumerate(fr.objects):
            if obj.class_name not in classes:
                continue
            if flt.require_untruncated and obj.truncated != 0:
                continue
            if obj.occluded > flt.max_occluded:
                continue
            if lo <= object_distance(obj, convention) <= hi:
                out.append((fr.image_id, idx))
    out.sort()
    return out


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def select_instances(eligible: Sequence[tuple[str, int]], ratio: float,
                     seed: int) -> list[tuple[str, int]]:
    """Uniform sample without replacement of ``round(ratio * n)`` instances."""
    if not (0.0 <= ratio <= 1.0):
        raise ValidationError(f"ratio must be in [0, 1], got {ratio}")
    pool = sorted(eligible)
    n_take = round_half_up(ratio * len(pool))
    if n_take >= len(pool):
        return pool
    if n_take == 0:
        return []
    picks = rng.stream(seed, "select").choice(len(pool), size=n_take, replace=False)
    return sorted(pool[i] for i in picks)


# -- per-instance geometry ------------------------------------------------

class Skip(Exception):
    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


def shrink_instance(m: InverseHeightModel, clean: BBox, offset: float,
                    min_pois_height: float = 0.0) -> tuple[BBox, float, float]:
    """Shrink ``clean`` so the model places it ``offset`` metres further away.

    Returns ``(pois_bbox, d_est, d_proj)``. Raises :class:`Skip` with reason
    ``"singular"`` or ``"too-small"`` when the instance cannot be poisoned.
    """
    h_orig = clean.height
    d_est = estimate(m, h_orig)
    d_proj = d_est + offset
    if offset == 0:
        return clean, d_est, d_proj
    try:
        h_pois = invert(m, d_proj)
    except SingularInversionError:
        raise Skip("singular") from None
    if h_pois < min_pois_height:
        raise Skip("too-small")
    scale = h_pois / h_orig
    if scale >= 1.0:
        # shrink lost to rounding
        return clean, d_est, d_proj
    return shrink_about_center(clean, scale), d_est, d_proj


def plan_poisoning(frames: Sequence[Frame], m: InverseHeightModel, flt: EligibilityFilter,
                   params: PoisonParams, convention: str | None = None) -> PoisonManifest:
    convention = convention or m.distance_convention
    eligible = filter_eligible(frames, flt, convention)
    selected = select_instances(eligible, params.ratio, params.seed)
    by_id = {fr.image_id: fr for fr in frames}
    records = []
    for image_id, idx in selected:
        obj = by_id[image_id].objects[idx]
        rec = PoisonRecord(image_id=image_id, instance_idx=idx, clean_bbox=obj.bbox,
                           d_gt=object_distance(obj, convention))
        try:
            rec.pois_bbox, rec.d_est, rec.d_proj = shrink_instance(
                m, obj.bbox, params.offset, params.min_pois_height)
        except Skip as s:
            rec.skipped_reason = s.reason
        records.append(rec)
    return PoisonManifest(model=m, params=params, filter=flt, distance_convention=convention,
                          image_ids=sorted(by_id), records=records,
                          eligible_count=len(eligible))


# -- per-frame application ------------------------------------------------

def render_trigger(image: np.ndarray | None, box: BBox, params: PoisonParams,
                   trigger: np.ndarray) -> tuple[int, int, int, int] | None:
    """Paint the trigger centered on ``box`` (in place) and return the painted rect.

    With ``image=None`` nothing is painted and the unclipped rect is returned.
    Raises :class:`Skip` when the patch rounds to zero size or falls entirely
    outside the image.
    """
    rect = trigger_rect(box, params.trigger_scale)
    if rect is None:
        raise Skip("degenerate-trigger")
    if image is None:
        return rect
    painted = composite(image, trigger, rect, params.blend)
    if painted is None:
        raise Skip("trigger-offscreen")
    return painted


def apply_to_frame(frame: Frame, image: np.ndarray | None, records: Sequence[PoisonRecord],
                   params: PoisonParams, trigger: np.ndarray) -> tuple[Frame, np.ndarray | None]:
    """Poison one frame. ``records`` are updated in place with trigger rects or skips.

    The input image is never modified; a copy is painted when needed.
    """
    active = [r for r in records if not r.skipped]
    if not active:
        return frame, image
    out_img = None if image is None else image.copy()
    objects = list(frame.objects)
    applied = set()
    for rec in sorted(active, key=lambda r: r.instance_idx):
        if rec.instance_idx in applied:
            raise ValidationError(f"instance {rec.key} poisoned twice")
        size_box = rec.clean_bbox if params.size_trigger_by == "clean" else rec.pois_bbox
        side_box = BBox.from_center(*rec.clean_bbox.center, size_box.width, size_box.height)
        try:
            rec.trigger_rect = render_trigger(out_img, side_box, params, trigger)
        except Skip as s:
            rec.skipped_reason = s.reason
            rec.pois_bbox = rec.d_est = rec.d_proj = None
            continue
        objects[rec.instance_idx] = objects[rec.instance_idx].with_bbox(rec.pois_bbox)
        applied.add(rec.instance_idx)
    if not applied:
        return frame, image
    return replace(frame, objects=tuple(objects)), out_img


def group_records(records: Iterable[PoisonRecord]) -> dict[str, list[PoisonRecord]]:
    groups: dict[str, list[PoisonRecord]] = {}
    for r in records:
        groups.setdefault(r.image_id, []).append(r)
    return groups


def frames_checksum(frames: Iterable[Frame]) -> str:
    h = hashlib.sha256()
    for fr in sorted(frames, key=lambda f: f.image_id):
        h.update(fr.image_id.encode())
        h.update(hashlib.sha256(format_frame(fr).encode()).digest())
    return h.hexdigest()


def images_checksum(images: Mapping[str, np.ndarray]) -> str:
    h = hashlib.sha256()
    for image_id in sorted(images):
        arr = np.ascontiguousarray(images[image_id])
        h.update(image_id.encode())
        h.update(repr(arr.shape).encode())
        h.update(hashlib.sha256(arr.tobytes()).digest())
    return h.hexdigest()


def poison_dataset(frames: Sequence[Frame], images: Mapping[str, np.ndarray] | None,
                   m: InverseHeightModel, flt: EligibilityFilter, params: PoisonParams,
                   trigger: np.ndarray | None = None, convention: str | None = None,
                   threads: int = 1):
    """In-memory pipeline. Returns ``(frames, images, manifest)``.

    ``images`` may be None for label-only poisoning; trigger rects are then
    recorded unclipped.
    """
    trigger = pokeball() if trigger is None else trigger
    manifest = plan_poisoning(frames, m, flt, params, convention)
    groups = group_records(manifest.records)

    def work(fr: Frame):
        img = None if images is None else images[fr.image_id]
        return apply_to_frame(fr, img, groups.get(fr.image_id, ()), params, trigger)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(work, frames))
    else:
        results = [work(fr) for fr in frames]
    out_frames = [r[0] for r in results]
    out_images = None if images is None else {fr.image_id: r[1] for fr, r in zip(frames, results)}
    manifest.checksums = {"input_labels": frames_checksum(frames),
                          "output_labels": frames_checksum(out_frames)}
    if images is not None:
        manifest.checksums["input_images"] = images_checksum(images)
        manifest.checksums["output_images"] = images_checksum(out_images)
    return out_frames, out_images, manifest
