"""Synthetic KITTI-style datasets whose annotations lie exactly on a model curve."""
from __future__ import annotations

import math

import numpy as np

from . import rng
from .dataset_io import Frame, KittiObject
from .distance_model import InverseHeightModel
from .geometry import BBox


def synthetic_frames(n_instances: int, model: InverseHeightModel, seed: int = 0,
                     per_frame: int = 4, distance_range=(10.0, 60.0),
                     aspect_range=(1.0, 2.0), class_name: str = "Car"):
    """Frames with ``n_instances`` objects, ``per_frame`` per image.

    Each object's euclidean distance ``d`` is uniform in ``distance_range``
    and its box height is exactly ``model.invert(d)``, so the model
    reproduces every distance. Boxes sit in disjoint horizontal slots.
    Returns ``(frames, (image_height, image_width))``.
    """
    lo, hi = distance_range
    h_max = model.invert(lo)
    slot_w = math.ceil(h_max * aspect_range[1]) + 8
    img_w = slot_w * per_frame
    img_h = math.ceil(h_max) + 40
    g = rng.stream(seed, "synthetic")
    frames = []
    n_frames = math.ceil(n_instances / per_frame)
    made = 0
    for f in range(n_frames):
        objs = []
        for s in range(min(per_frame, n_instances - made)):
            d = g.uniform(lo, hi)
            h = model.invert(d)
            w = h * g.uniform(*aspect_range)
            cx = slot_w * s + slot_w / 2.0 + g.uniform(-2.0, 2.0)
            cy = img_h / 2.0 + g.uniform(-10.0, 10.0)
            x = g.uniform(-4.0, 4.0)
            y = 1.65
            z = math.sqrt(d * d - x * x - y * y)
            objs.append(KittiObject(
                class_name=class_name, truncated=0.0, occluded=int(g.integers(0, 2)),
                alpha=0.0, bbox=BBox.from_center(cx, cy, w, h),
                dims_hwl=(1.5, 1.6, 3.9), location_xyz=(x, y, z), rotation_y=0.0))
            made += 1
        frames.append(Frame(image_id=f"{f:06d}", objects=tuple(objs)))
    return frames, (img_h, img_w)


def synthetic_images(frames, shape, seed: int = 0) -> dict[str, np.ndarray]:
    h, w = shape
    return {fr.image_id: rng.stream(seed, "image", fr.image_id)
            .integers(0, 256, size=(h, w, 3), dtype=np.uint8) for fr in frames}
