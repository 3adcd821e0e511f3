"""Simulated detector emitting predictions between clean and poisoned behaviour.

Stands in for a trained, possibly infected, detector so the ASR and impact
pipelines can be checked end to end.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

from . import rng
from .dataset_io import Prediction
from .errors import ValidationError
from .geometry import BBox
from .poison import PoisonManifest, PoisonRecord

NOISE_TRUNCATION = 0.5


@dataclass(frozen=True)
class SimDetectorParams:
    attack_rate: float = 1.0
    height_noise: float = 0.0
    center_noise: float = 0.0
    miss_rate: float = 0.0
    confidence_range: tuple[float, float] = (0.5, 1.0)
    seed: int = 0
    class_name: str | None = None

    def __post_init__(self):
        if not (0.0 <= self.attack_rate <= 1.0):
            raise ValidationError(f"attack_rate must be in [0, 1], got {self.attack_rate}")
        if not self.height_noise >= 0:
            raise ValidationError("height_noise must be >= 0")
        if not self.center_noise >= 0:
            raise ValidationError("center_noise must be >= 0")
        if not (0.0 <= self.miss_rate < 1.0):
            raise ValidationError(f"miss_rate must be in [0, 1), got {self.miss_rate}")
        lo, hi = self.confidence_range
        if not (0.0 < lo <= hi <= 1.0):
            raise ValidationError(f"confidence_range must satisfy 0 < lo <= hi <= 1, got {(lo, hi)}")
        if not (0 <= self.seed < 2 ** 64):
            raise ValidationError("seed must be a 64-bit unsigned integer")

    def to_json(self) -> dict:
        d = asdict(self)
        d["confidence_range"] = list(self.confidence_range)
        return d


def simulate_record(rec: PoisonRecord, params: SimDetectorParams, class_name: str) -> Prediction | None:
    g = rng.stream(params.seed, "sim", rec.image_id, rec.instance_idx)
    # fixed draw order: miss, attack, confidence, then noise
    if g.random() < params.miss_rate:
        return None
    base = rec.pois_bbox if g.random() < params.attack_rate else rec.clean_bbox
    lo, hi = params.confidence_range
    conf = lo + (hi - lo) * g.random()
    eps = 0.0
    if params.height_noise > 0:
        while True:
            eps = g.normal(0.0, params.height_noise)
            if -NOISE_TRUNCATION < eps < NOISE_TRUNCATION:
                break
    dx = dy = 0.0
    if params.center_noise > 0:
        dx, dy = g.normal(0.0, params.center_noise, size=2)
    cx, cy = base.center
    f = 1.0 + eps
    if eps == 0.0 and dx == 0.0 and dy == 0.0:
        box = base
    else:
        box = BBox.from_center(cx + dx, cy + dy, base.width * f, base.height * f)
    return Prediction(class_name, float(conf), box)


def simulate(manifest: PoisonManifest, params: SimDetectorParams, threads: int = 1) -> dict[str, list[Prediction]]:
    """Predictions for every manifest image; images without records get an empty list."""
    class_name = params.class_name or manifest.target_classes[0]
    records = manifest.active_records

    def work(rec):
        return rec, simulate_record(rec, params, class_name)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(work, records))
    else:
        results = [work(r) for r in records]
    out: dict[str, list[Prediction]] = {iid: [] for iid in manifest.image_ids}
    for rec, pred in results:
        if pred is not None:
            out[rec.image_id].append(pred)
    return out
