"""Inverse height-to-distance model ``d = k / h + c``.

The same fitted model projects poisoned box heights and serves as the
built-in distance estimator.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .dataset_io import DONTCARE, Frame, object_distance
from .errors import (DegenerateFitError, NonPhysicalDataError, SingularInversionError,
                     ValidationError)

INVERSION_EPS = 1e-6


@dataclass(frozen=True)
class InverseHeightModel:
    k: float
    c: float = 0.0
    distance_convention: str = "euclidean"
    filter: dict | None = field(default=None, compare=False)

    def __post_init__(self):
        if not (math.isfinite(self.k) and self.k > 0):
            raise ValidationError(f"model requires k > 0, got {self.k}")
        if not (math.isfinite(self.c) and self.c >= 0):
            raise ValidationError(f"model requires c >= 0, got {self.c}")

    def estimate(self, h: float) -> float:
        return estimate(self, h)

    def invert(self, d: float) -> float:
        return invert(self, d)

    def to_json(self) -> dict:
        return {"k": self.k, "c": self.c,
                "distance_convention": self.distance_convention,
                "filter": self.filter}

    @classmethod
    def from_json(cls, obj: dict) -> "InverseHeightModel":
        try:
            return cls(k=float(obj["k"]), c=float(obj["c"]),
                       distance_convention=obj.get("distance_convention", "euclidean"),
                       filter=obj.get("filter"))
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed model JSON: {exc}") from None

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "InverseHeightModel":
        try:
            obj = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"{path}: cannot read model: {exc}") from None
        return cls.from_json(obj)


@dataclass(frozen=True)
class HDSample:
    h: float
    d: float

    def __post_init__(self):
        if not (self.h > 0 and self.d > 0):
            raise ValidationError(f"sample needs h > 0 and d > 0, got h={self.h}, d={self.d}")


def estimate(m: InverseHeightModel, h: float) -> float:
    if not h > 0:
        raise ValidationError(f"box height must be positive, got {h}")
    return m.k / h + m.c


def invert(m: InverseHeightModel, d: float) -> float:
    """Box height at which the model predicts distance ``d``."""
    if not d > m.c + INVERSION_EPS:
        raise SingularInversionError(f"cannot invert at d={d} with c={m.c}")
    return m.k / (d - m.c)


def fit(samples: Sequence[HDSample], distance_convention: str = "euclidean",
        filter: dict | None = None) -> InverseHeightModel:
    """Least-squares fit of ``d ~ k * (1/h) + c`` subject to ``c >= 0``.

    The problem is linear in ``u = 1/h``, so it is solved in closed form on
    centered sums. When the unconstrained intercept is negative the
    constraint is active and ``k`` is refit through the origin. Sums use
    ``math.fsum`` so the result does not depend on sample order.
    """
    if len(samples) < 2 or len({s.h for s in samples}) < 2:
        raise DegenerateFitError("fit needs at least 2 samples with distinct heights")
    n = len(samples)
    u = [1.0 / s.h for s in samples]
    d = [s.d for s in samples]
    u_mean = math.fsum(u) / n
    d_mean = math.fsum(d) / n
    suu = math.fsum((ui - u_mean) ** 2 for ui in u)
    sud = math.fsum((ui - u_mean) * (di - d_mean) for ui, di in zip(u, d))
    if suu <= 0.0:
        raise DegenerateFitError("heights are numerically indistinguishable")
    k = sud / suu
    c = d_mean - k * u_mean
    if c < 0.0:
        c = 0.0
        k = math.fsum(ui * di for ui, di in zip(u, d)) / math.fsum(ui * ui for ui in u)
    if not k > 0.0:
        raise NonPhysicalDataError(
            f"fitted k={k} <= 0: distance does not decrease with box height")
    return InverseHeightModel(k=k, c=c, distance_convention=distance_convention, filter=filter)


def model_mae(m: InverseHeightModel, samples: Sequence[HDSample]) -> float:
    if not samples:
        raise DegenerateFitError("MAE of an empty sample set is undefined")
    return math.fsum(abs(estimate(m, s.h) - s.d) for s in samples) / len(samples)


def samples_from_frames(frames: Iterable[Frame], eligible: Iterable[tuple[str, int]] | None = None,
                        convention: str = "euclidean") -> list[HDSample]:
    """(height, distance) pairs from label frames.

    With ``eligible`` given only those ``(image_id, instance_idx)`` pairs are
    used; otherwise every non-DontCare object with positive distance.
    """
    frames = list(frames)
    out = []
    if eligible is not None:
        by_id = {fr.image_id: fr for fr in frames}
        for image_id, idx in eligible:
            obj = by_id[image_id].objects[idx]
            out.append(HDSample(obj.bbox.height, object_distance(obj, convention)))
        return out
    for fr in frames:
        for obj in fr.objects:
            if obj.class_name == DONTCARE:
                continue
            dist = object_distance(obj, convention)
            if dist > 0:
                out.append(HDSample(obj.bbox.height, dist))
    return out
