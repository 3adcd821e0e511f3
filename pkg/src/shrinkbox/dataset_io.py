"""KITTI labels, prediction files and PNG rasters.

Dataset root layout::

    <root>/images/<image_id>.png
    <root>/labels/<image_id>.txt
    <root>/predictions/<run_name>/<image_id>.txt   (optional)

A label line has 15 whitespace-separated fields, 16 when a detection score
is appended::

    class truncated occluded alpha left top right bottom h w l x y z rotation_y [score]

Instance identity everywhere in this package is ``(image_id, line_index)``
in the clean label file.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import ParseError, ValidationError
from .geometry import BBox

LABEL_FIELDS = (
    "class", "truncated", "occluded", "alpha",
    "left", "top", "right", "bottom",
    "height", "width", "length", "x", "y", "z",
    "rotation_y", "score",
)
DONTCARE = "DontCare"
DISTANCE_CONVENTIONS = ("euclidean", "longitudinal")


@dataclass(frozen=True)
class KittiObject:
    class_name: str
    truncated: float
    occluded: int
    alpha: float
    bbox: BBox
    dims_hwl: tuple[float, float, float]
    location_xyz: tuple[float, float, float]
    rotation_y: float
    score: float | None = None

    def __post_init__(self):
        # DontCare regions carry -1 sentinels for truncation and occlusion.
        if self.class_name == DONTCARE:
            return
        if not (0.0 <= self.truncated <= 1.0):
            raise ValidationError(f"truncated must be in [0, 1], got {self.truncated}")
        if self.occluded not in (0, 1, 2, 3):
            raise ValidationError(f"occluded must be one of 0..3, got {self.occluded}")

    def with_bbox(self, bbox: BBox) -> "KittiObject":
        return replace(self, bbox=bbox)


@dataclass(frozen=True)
class Frame:
    image_id: str
    objects: tuple[KittiObject, ...] = ()
    image_path: Path | None = None


@dataclass(frozen=True)
class Prediction:
    class_name: str
    confidence: float
    bbox: BBox


# image_id -> predictions for that image
PredictionSet = dict[str, list[Prediction]]


# -- labels ---------------------------------------------------------------

def _fmt(v: float, digits: int = 2) -> str:
    s = f"{v:.{digits}f}"
    if s.lstrip("-").strip("0.") == "":
        s = s.lstrip("-")
    return s


def _float(tok: str, path, line_no, name) -> float:
    try:
        v = float(tok)
    except ValueError:
        raise ParseError(path, line_no, name, f"not a number: {tok!r}") from None
    if not math.isfinite(v):
        raise ParseError(path, line_no, name, f"non-finite value {tok!r}")
    return v


def parse_label_line(line: str, path="<string>", line_no: int = 1) -> KittiObject:
    toks = line.split()
    if len(toks) not in (15, 16):
        raise ParseError(path, line_no, "line", f"expected 15 or 16 fields, got {len(toks)}")
    vals = [_float(t, path, line_no, LABEL_FIELDS[i]) for i, t in enumerate(toks[1:], start=1)]
    occ = vals[1]
    if occ != int(occ):
        raise ParseError(path, line_no, "occluded", f"not an integer: {toks[2]!r}")
    try:
        bbox = BBox(*vals[3:7])
    except ValidationError as exc:
        raise ParseError(path, line_no, "bbox", str(exc)) from None
    score = vals[14] if len(toks) == 16 else None
    if score is not None and not (0.0 <= score <= 1.0):
        raise ParseError(path, line_no, "score", f"must be in [0, 1], got {score}")
    try:
        return KittiObject(
            class_name=toks[0],
            truncated=vals[0],
            occluded=int(occ),
            alpha=vals[2],
            bbox=bbox,
            dims_hwl=tuple(vals[7:10]),
            location_xyz=tuple(vals[10:13]),
            rotation_y=vals[13],
            score=score,
        )
    except ValidationError as exc:
        field_name = "truncated" if "truncated" in str(exc) else "occluded"
        raise ParseError(path, line_no, field_name, str(exc)) from None


def format_label_line(obj: KittiObject) -> str:
    parts = [
        obj.class_name,
        _fmt(obj.truncated),
        str(obj.occluded),
        _fmt(obj.alpha),
        *(_fmt(v) for v in obj.bbox.as_tuple()),
        *(_fmt(v) for v in obj.dims_hwl),
        *(_fmt(v) for v in obj.location_xyz),
        _fmt(obj.rotation_y),
    ]
    if obj.score is not None:
        parts.append(_fmt(obj.score, 4))
    return " ".join(parts)


def parse_label_file(path) -> Frame:
    path = Path(path)
    objects = []
    with open(path, encoding="utf-8") as fh:
        for i, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            objects.append(parse_label_line(line, path, i))
    return Frame(image_id=path.stem, objects=tuple(objects))


def parse_labels(dir_or_file) -> list[Frame]:
    """Parse a single label file or every ``*.txt`` in a directory, sorted by id."""
    p = Path(dir_or_file)
    if p.is_file():
        return [parse_label_file(p)]
    if not p.is_dir():
        raise ValidationError(f"no such label file or directory: {p}")
    return [parse_label_file(f) for f in sorted(p.glob("*.txt"))]


def format_frame(frame: Frame) -> str:
    return "".join(format_label_line(o) + "\n" for o in frame.objects)


def write_labels(frames: Iterable[Frame], directory) -> list[Path]:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    written = []
    for fr in frames:
        out = d / f"{fr.image_id}.txt"
        out.write_text(format_frame(fr), encoding="utf-8")
        written.append(out)
    return written


def object_distance(obj: KittiObject, convention: str = "euclidean") -> float:
    x, y, z = obj.location_xyz
    if convention == "euclidean":
        return math.sqrt(x * x + y * y + z * z)
    if convention == "longitudinal":
        return z
    raise ValidationError(f"unknown distance convention {convention!r}")


# -- predictions ----------------------------------------------------------

def parse_prediction_file(path) -> list[Prediction]:
    path = Path(path)
    preds = []
    names = ("class", "confidence", "left", "top", "right", "bottom")
    with open(path, encoding="utf-8") as fh:
        for i, line in enumerate(fh, start=1):
            toks = line.split()
            if not toks:
                continue
            if len(toks) != 6:
                raise ParseError(path, i, "line", f"expected 6 fields, got {len(toks)}")
            vals = [_float(t, path, i, names[j]) for j, t in enumerate(toks[1:], start=1)]
            if not (0.0 <= vals[0] <= 1.0):
                raise ParseError(path, i, "confidence", f"must be in [0, 1], got {vals[0]}")
            try:
                bbox = BBox(*vals[1:])
            except ValidationError as exc:
                raise ParseError(path, i, "bbox", str(exc)) from None
            preds.append(Prediction(toks[0], vals[0], bbox))
    return preds


def parse_predictions(directory) -> PredictionSet:
    d = Path(directory)
    if not d.is_dir():
        raise ValidationError(f"prediction directory not found: {d}")
    return {f.stem: parse_prediction_file(f) for f in sorted(d.glob("*.txt"))}


def format_prediction(p: Prediction) -> str:
    # Six decimals: sub-micropixel round-trip error keeps noiseless runs exact
    # for every metric threshold used downstream.
    b = p.bbox
    return (f"{p.class_name} {p.confidence:.6f} "
            f"{b.left:.6f} {b.top:.6f} {b.right:.6f} {b.bottom:.6f}")


def write_predictions(preds: Mapping[str, list[Prediction]], directory) -> list[Path]:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    written = []
    for image_id in sorted(preds):
        out = d / f"{image_id}.txt"
        out.write_text("".join(format_prediction(p) + "\n" for p in preds[image_id]),
                       encoding="utf-8")
        written.append(out)
    return written


# -- images ---------------------------------------------------------------

def load_image(path) -> np.ndarray:
    """Read an 8-bit RGB raster as an ``(H, W, 3)`` uint8 array."""
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode != "RGB":
                if im.mode in ("L", "P", "RGBA"):
                    im = im.convert("RGB")
                else:
                    raise ValidationError(f"{path}: unsupported image mode {im.mode}")
            return np.asarray(im, dtype=np.uint8).copy()
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise ValidationError(f"{path}: cannot read image: {exc}") from None


def save_image(raster: np.ndarray, path) -> None:
    if raster.dtype != np.uint8 or raster.ndim != 3 or raster.shape[2] != 3:
        raise ValidationError(f"expected (H, W, 3) uint8 raster, got {raster.dtype} {raster.shape}")
    path = Path(path)
    if path.suffix.lower() != ".png":
        raise ValidationError(f"{path}: only lossless PNG output is supported")
    Image.fromarray(raster, mode="RGB").save(path, format="PNG")


def load_rgba(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGBA"), dtype=np.uint8).copy()
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise ValidationError(f"{path}: cannot read image: {exc}") from None


# -- dataset roots --------------------------------------------------------

@dataclass
class Dataset:
    root: Path
    frames: list[Frame] = field(default_factory=list)

    @property
    def labels_dir(self) -> Path:
        return _subdir(self.root, LABEL_DIRS)

    @property
    def images_dir(self) -> Path:
        return _subdir(self.root, IMAGE_DIRS)

    def has_images(self) -> bool:
        return self.images_dir.is_dir()


# shrinkbox layout first, then the directory names of the KITTI download
LABEL_DIRS = ("labels", "label_2")
IMAGE_DIRS = ("images", "image_2")


def _subdir(root: Path, names) -> Path:
    for n in names:
        if (root / n).is_dir():
            return root / n
    return root / names[0]


def read_id_list(path) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        return [ln.strip() for ln in fh if ln.strip()]


def load_dataset(root, ids: Iterable[str] | None = None) -> Dataset:
    root = Path(root)
    labels = _subdir(root, LABEL_DIRS)
    if not labels.is_dir():
        raise ValidationError(f"{root}: missing labels/ (or label_2/) directory")
    if ids is None:
        frames = parse_labels(labels)
    else:
        frames = []
        for image_id in sorted(set(ids)):
            f = labels / f"{image_id}.txt"
            if not f.is_file():
                raise ValidationError(f"{root}: no label file for id {image_id!r}")
            frames.append(parse_label_file(f))
    images = _subdir(root, IMAGE_DIRS)
    if images.is_dir():
        frames = [replace(fr, image_path=images / f"{fr.image_id}.png") for fr in frames]
    return Dataset(root=root, frames=frames)


def default_threads() -> int:
    env = os.environ.get("SHRINKBOX_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ValidationError(f"SHRINKBOX_THREADS must be an integer, got {env!r}") from None
        if n < 1:
            raise ValidationError("SHRINKBOX_THREADS must be >= 1")
        return n
    return os.cpu_count() or 1
