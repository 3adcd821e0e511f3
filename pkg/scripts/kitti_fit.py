#!/usr/bin/env python3
"""Filter counts and fit quality on a local KITTI object-detection copy.

Expects ROOT/labels (or label_2) and train/val id lists. Prints instance
counts for the base filter and the occlusion-restricted filter, then the
validation MAE of models fitted on filtered and on unfiltered instances.
"""
import argparse
import time
from pathlib import Path

from shrinkbox.dataset_io import load_dataset, read_id_list
from shrinkbox.distance_model import fit, model_mae, samples_from_frames
from shrinkbox.poison import EligibilityFilter, filter_eligible


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("root", type=Path)
    ap.add_argument("--train-ids", type=Path, default=None)
    ap.add_argument("--val-ids", type=Path, default=None)
    ap.add_argument("--convention", choices=["euclidean", "longitudinal"], default="euclidean")
    ap.add_argument("--out", type=Path, default=None, help="save the filtered model here")
    args = ap.parse_args()

    t0 = time.perf_counter()
    train = load_dataset(args.root, read_id_list(args.train_ids or args.root / "train.txt")).frames
    val = load_dataset(args.root, read_id_list(args.val_ids or args.root / "val.txt")).frames
    conv = args.convention

    base = EligibilityFilter(max_occluded=3)
    occ = EligibilityFilter(max_occluded=1)
    for name, flt in (("car/untruncated/10-60m", base), ("+ occluded<=1", occ)):
        print(f"{name:24s} train {len(filter_eligible(train, flt, conv)):6d}"
              f"  val {len(filter_eligible(val, flt, conv)):6d}")

    m = fit(samples_from_frames(train, filter_eligible(train, base, conv), conv))
    mae = model_mae(m, samples_from_frames(val, filter_eligible(val, base, conv), conv))
    mu = fit(samples_from_frames(train, convention=conv))
    mae_u = model_mae(mu, samples_from_frames(val, convention=conv))
    print(f"filtered fit    k={m.k:.2f} c={m.c:.3f}  val MAE {mae:.3f} m")
    print(f"unfiltered fit  k={mu.k:.2f} c={mu.c:.3f}  val MAE {mae_u:.3f} m")
    print(f"elapsed {time.perf_counter() - t0:.1f} s")
    if args.out:
        m.save(args.out)


if __name__ == "__main__":
    main()
