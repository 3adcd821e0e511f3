#!/usr/bin/env python3
"""Write a synthetic KITTI-style dataset (labels/ and images/) whose boxes lie on a known model curve."""
import argparse
from pathlib import Path

from shrinkbox.dataset_io import save_image, write_labels
from shrinkbox.distance_model import InverseHeightModel
from shrinkbox.synthetic import synthetic_frames, synthetic_images


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("out", type=Path)
    ap.add_argument("--instances", type=int, default=400)
    ap.add_argument("--per-frame", type=int, default=4)
    ap.add_argument("--k", type=float, default=1200.0)
    ap.add_argument("--c", type=float, default=2.0)
    ap.add_argument("--distance-range", type=float, nargs=2, default=(10.0, 60.0))
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--labels-only", action="store_true")
    args = ap.parse_args()

    model = InverseHeightModel(args.k, args.c)
    frames, shape = synthetic_frames(args.instances, model, seed=args.seed,
                                     per_frame=args.per_frame,
                                     distance_range=tuple(args.distance_range))
    write_labels(frames, args.out / "labels")
    if not args.labels_only:
        (args.out / "images").mkdir(parents=True, exist_ok=True)
        for image_id, img in synthetic_images(frames, shape, seed=args.seed).items():
            save_image(img, args.out / "images" / f"{image_id}.png")
    print(f"wrote {len(frames)} frames, {args.instances} instances, image size {shape[1]}x{shape[0]} to {args.out}")


if __name__ == "__main__":
    main()
