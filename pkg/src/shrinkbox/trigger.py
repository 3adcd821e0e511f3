"""Trigger patch generation and alpha compositing."""
from __future__ import annotations

import math

import numpy as np
from PIL import Image

from .errors import ValidationError
from .geometry import BBox


def pokeball(side: int = 64) -> np.ndarray:
    """Procedural ball-style trigger: red top, white bottom, black band and button.

    Pixels outside the disc are fully transparent.
    """
    if side < 4:
        raise ValidationError("trigger side must be at least 4 px")
    yy, xx = np.mgrid[0:side, 0:side].astype(np.float64) + 0.5
    c = side / 2.0
    r = np.hypot(xx - c, yy - c) / c
    dy = (yy - c) / c
    out = np.zeros((side, side, 4), dtype=np.uint8)
    disc = r <= 1.0
    out[disc & (dy < 0)] = (220, 20, 30, 255)
    out[disc & (dy >= 0)] = (245, 245, 245, 255)
    out[disc & (np.abs(dy) <= 0.08)] = (0, 0, 0, 255)
    out[disc & (r >= 0.92)] = (0, 0, 0, 255)
    out[r <= 0.30] = (0, 0, 0, 255)
    out[r <= 0.20] = (245, 245, 245, 255)
    return out


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def trigger_rect(box: BBox, scale: float) -> tuple[int, int, int, int] | None:
    """Unclipped integer square ``(left, top, right, bottom)`` centered on ``box``.

    Returns None when the side rounds to zero pixels.
    """
    side = _round_half_up(scale * box.height)
    if side <= 0:
        return None
    cx, cy = box.center
    left = _round_half_up(cx - side / 2.0)
    top = _round_half_up(cy - side / 2.0)
    return (left, top, left + side, top + side)


def clip_rect(rect, width: int, height: int):
    l, t, r, b = rect
    l, t, r, b = max(l, 0), max(t, 0), min(r, width), min(b, height)
    if l >= r or t >= b:
        return None
    return (l, t, r, b)


def resize_nearest(trigger: np.ndarray, side: int) -> np.ndarray:
    if trigger.shape[0] == side and trigger.shape[1] == side:
        return trigger
    return np.asarray(Image.fromarray(trigger, mode="RGBA").resize((side, side), Image.NEAREST))


def composite(image: np.ndarray, trigger: np.ndarray, rect, blend: float) -> tuple[int, int, int, int] | None:
    """Alpha-composite ``trigger`` (square RGBA) into ``image`` in place over ``rect``.

    ``rect`` is the unclipped square; only in-bounds pixels are painted.
    Returns the clipped rectangle actually painted, or None if nothing was.
    """
    if trigger.ndim != 3 or trigger.shape[2] != 4 or trigger.shape[0] != trigger.shape[1]:
        raise ValidationError(f"trigger must be a square RGBA raster, got shape {trigger.shape}")
    if not (0.0 < blend <= 1.0):
        raise ValidationError(f"blend must be in (0, 1], got {blend}")
    h, w = image.shape[:2]
    clipped = clip_rect(rect, w, h)
    if clipped is None:
        return None
    side = rect[2] - rect[0]
    patch = resize_nearest(trigger, side)
    l, t, r, b = clipped
    sub = patch[t - rect[1]:b - rect[1], l - rect[0]:r - rect[0]]
    a = (sub[..., 3:4].astype(np.float64) / 255.0) * blend
    region = image[t:b, l:r].astype(np.float64)
    mixed = a * sub[..., :3].astype(np.float64) + (1.0 - a) * region
    image[t:b, l:r] = np.floor(mixed + 0.5).clip(0, 255).astype(np.uint8)
    return clipped
