"""Axis-aligned bounding boxes in image pixel coordinates (y grows downward)."""
from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import ValidationError


@dataclass(frozen=True, order=True)
class BBox:
    left: float
    top: float
    right: float
    bottom: float

    def __post_init__(self):
        vals = (self.left, self.top, self.right, self.bottom)
        if not all(math.isfinite(v) for v in vals):
            raise ValidationError(f"non-finite box coordinates {vals}")
        if not (self.left < self.right and self.top < self.bottom):
            raise ValidationError(f"degenerate box {vals}: need left<right and top<bottom")

    @property
    def width(self) -> float:
        return self.right - self.left

    @property
    def height(self) -> float:
        return self.bottom - self.top

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.left + self.right), 0.5 * (self.top + self.bottom))

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.left, self.top, self.right, self.bottom)

    @classmethod
    def from_center(cls, cx: float, cy: float, width: float, height: float) -> "BBox":
        return cls(cx - 0.5 * width, cy - 0.5 * height, cx + 0.5 * width, cy + 0.5 * height)


def iou(a: BBox, b: BBox) -> float:
    iw = min(a.right, b.right) - max(a.left, b.left)
    ih = min(a.bottom, b.bottom) - max(a.top, b.top)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    union = a.area + b.area - inter
    return min(1.0, inter / union)


def shrink_about_center(b: BBox, scale: float) -> BBox:
    """Scale both sides of ``b`` by ``scale`` keeping its center fixed."""
    if not (0.0 < scale <= 1.0):
        raise ValidationError(f"shrink scale must be in (0, 1], got {scale}")
    if scale == 1.0:
        return b
    cx, cy = b.center
    return BBox.from_center(cx, cy, b.width * scale, b.height * scale)
