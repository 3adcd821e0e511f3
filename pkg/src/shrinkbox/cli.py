"""Command-line interface: shrink-box poisoning of KITTI-format data and attack evaluation.

Subcommands: fit, poison, eval-asr, eval-map, eval-impact, simulate, report.
Every run writes ``run.json`` into its output directory; ``shrinkbox
--replay run.json`` re-executes it. Exit codes: 0 success, 2 input or
validation error, 3 degenerate computation.
"""
from __future__ import annotations

import argparse
import logging
import shutil
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import __version__
from .dataset_io import (DISTANCE_CONVENTIONS, format_frame, load_dataset, load_image,
                         load_rgba, parse_labels, parse_predictions, read_id_list, save_image,
                         write_predictions, default_threads)
from .detector_sim import SimDetectorParams, simulate
from .distance_model import InverseHeightModel, fit, model_mae, samples_from_frames
from .errors import DegenerateError, ShrinkBoxError, ValidationError
from .impact import FileDistanceEstimator, ModelEstimator, evaluate_impact
from .metrics import (COCO_THRESHOLDS, DEFAULT_IOU_THR, DEFAULT_XS, asr_report,
                      average_precision, match_predictions)
from .poison import (EligibilityFilter, PoisonManifest, PoisonParams, apply_to_frame,
                     filter_eligible, group_records, plan_poisoning)
from .reports import (AP_REPORT, ASR_REPORT, IMPACT_REPORT, RUN_FILE, ap_csv, asr_csv,
                      combine_digests, file_sha256, merge_runs, read_json, write_csv,
                      write_json)
from .trigger import pokeball

log = logging.getLogger("shrinkbox")

EXIT_OK, EXIT_INPUT, EXIT_DEGENERATE = 0, 2, 3


def _add_filter_flags(p):
    g = p.add_argument_group("eligibility filter")
    g.add_argument("--classes", nargs="+", default=["Car"])
    g.add_argument("--distance-range", nargs=2, type=float, default=[10.0, 60.0],
                   metavar=("MIN", "MAX"))
    g.add_argument("--max-occluded", type=int, default=1)
    g.add_argument("--allow-truncated", action="store_true",
                   help="keep truncated objects (default: only truncated == 0)")


def _filter_from(args) -> EligibilityFilter:
    return EligibilityFilter(classes=tuple(args.classes),
                             require_untruncated=not args.allow_truncated,
                             distance_range=tuple(args.distance_range),
                             max_occluded=args.max_occluded)


def _threads(args) -> int:
    return args.threads if args.threads else default_threads()


def _write_run(out: Path, args, argv) -> None:
    config = {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(vars(args).items())
              if k not in ("func", "threads", "replay")}
    write_json({"tool": "shrinkbox", "version": __version__, "subcommand": args.command,
                "argv": list(argv), "config": config}, out / RUN_FILE)


# -- fit ------------------------------------------------------------------

def cmd_fit(args) -> dict:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    train_ids = read_id_list(args.train_ids) if args.train_ids else None
    train = load_dataset(args.dataset, train_ids).frames
    flt = None if args.no_filter else _filter_from(args)

    def samples(frames):
        if flt is None:
            return samples_from_frames(frames, convention=args.convention)
        return samples_from_frames(frames, filter_eligible(frames, flt, args.convention),
                                   args.convention)

    train_s = samples(train)
    model = fit(train_s, distance_convention=args.convention,
                filter=None if flt is None else flt.to_json())
    report = {"k": model.k, "c": model.c, "distance_convention": args.convention,
              "filter": model.filter, "train": {"frames": len(train), "samples": len(train_s),
                                                "mae": model_mae(model, train_s)}}
    pairs = [("train", s) for s in train_s]
    if args.val_ids:
        val = load_dataset(args.dataset, read_id_list(args.val_ids)).frames
        val_s = samples(val)
        report["val"] = {"frames": len(val), "samples": len(val_s),
                         "mae": model_mae(model, val_s)}
        pairs += [("val", s) for s in val_s]
    model.save(out / "model.json")
    write_json(report, out / "fit_report.json")
    write_csv(out / "hd_pairs.csv", ["split", "h", "d", "d_model"],
              ([split, s.h, s.d, model.estimate(s.h)] for split, s in pairs))
    return report


# -- poison ---------------------------------------------------------------

def cmd_poison(args) -> dict:
    out = Path(args.out)
    ids = read_id_list(args.ids) if args.ids else None
    ds = load_dataset(args.dataset, ids)
    if out.resolve() == Path(args.dataset).resolve():
        raise ValidationError("output root must differ from the input dataset")
    model = InverseHeightModel.load(args.model)
    convention = args.convention or model.distance_convention
    params = PoisonParams(offset=args.offset, trigger_scale=args.trigger_scale,
                          blend=args.blend, ratio=args.ratio, seed=args.seed,
                          min_pois_height=args.min_pois_height,
                          size_trigger_by=args.size_trigger_by)
    trigger = load_rgba(args.trigger) if args.trigger else pokeball()
    if trigger.shape[0] != trigger.shape[1]:
        raise ValidationError(f"trigger must be square, got {trigger.shape[1]}x{trigger.shape[0]}")
    use_images = ds.has_images() and not args.labels_only
    if not use_images:
        log.warning("no images: poisoning labels only, trigger rects are unclipped")

    manifest = plan_poisoning(ds.frames, model, _filter_from(args), params, convention)
    groups = group_records(manifest.records)
    (out / "labels").mkdir(parents=True, exist_ok=True)
    if use_images:
        (out / "images").mkdir(parents=True, exist_ok=True)

    def work(frame):
        recs = groups.get(frame.image_id, ())
        src_lbl = ds.labels_dir / f"{frame.image_id}.txt"
        dst_lbl = out / "labels" / src_lbl.name
        src_img = ds.images_dir / f"{frame.image_id}.png"
        dst_img = out / "images" / src_img.name
        if use_images and not src_img.is_file():
            raise ValidationError(f"missing image for {frame.image_id}: {src_img}")
        image = load_image(src_img) if (use_images and recs) else None
        new_frame, new_image = apply_to_frame(frame, image, recs, params, trigger)
        if new_frame is frame:
            shutil.copyfile(src_lbl, dst_lbl)
            if use_images:
                shutil.copyfile(src_img, dst_img)
        else:
            dst_lbl.write_text(format_frame(new_frame), encoding="utf-8")
            if use_images:
                save_image(new_image, dst_img)
        digests = {"lbl": (file_sha256(src_lbl), file_sha256(dst_lbl))}
        if use_images:
            digests["img"] = (file_sha256(src_img), file_sha256(dst_img))
        return frame.image_id, digests

    n = _threads(args)
    if n > 1:
        with ThreadPoolExecutor(max_workers=n) as ex:
            results = list(ex.map(work, ds.frames))
    else:
        results = [work(fr) for fr in ds.frames]

    sums = {}
    kinds = (("lbl", "labels"), ("img", "images")) if use_images else (("lbl", "labels"),)
    for kind, name in kinds:
        sums[f"input_{name}"] = combine_digests((i, d[kind][0]) for i, d in results)
        sums[f"output_{name}"] = combine_digests((i, d[kind][1]) for i, d in results)
    manifest.checksums = sums
    write_json(manifest.to_json(), out / "manifest.json")
    return manifest.summary()


# -- evaluation -------------------------------------------------------------

def _load_manifest(path) -> PoisonManifest:
    return PoisonManifest.from_json(read_json(path))


def cmd_eval_asr(args) -> dict:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = _load_manifest(args.manifest)
    preds = parse_predictions(args.predictions)
    result = match_predictions(preds, manifest, args.iou_thr, args.class_name)
    report = asr_report(result, args.iou_thr, args.xs)
    report.update(tag=args.tag, poison_ratio=manifest.params.ratio)
    write_json(report, out / ASR_REPORT)
    asr_csv(report, out / "asr_curve.csv")
    return report


def cmd_eval_map(args) -> dict:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    gt = parse_labels(args.labels)
    preds = parse_predictions(args.predictions)
    res = average_precision(preds, gt, args.iou_thresholds, args.classes)
    report = res.to_json()
    report.update(tag=args.tag, poison_ratio=args.poison_ratio, condition=args.condition)
    write_json(report, out / AP_REPORT)
    ap_csv(report, out / "ap.csv")
    return report


def cmd_eval_impact(args) -> dict:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = _load_manifest(args.manifest)
    pc = parse_predictions(args.pred_clean)
    pp = parse_predictions(args.pred_pois)
    if args.clean_distances or args.pois_distances:
        if not (args.clean_distances and args.pois_distances):
            raise ValidationError("--clean-distances and --pois-distances go together")
        est = FileDistanceEstimator.from_dir(args.clean_distances)
        est_p = FileDistanceEstimator.from_dir(args.pois_distances)
    else:
        model = InverseHeightModel.load(args.model) if args.model else manifest.model
        est = est_p = ModelEstimator(model)
    rep = evaluate_impact(pc, pp, manifest, est, args.iou_thr, estimator_pois=est_p)
    report = rep.to_json()
    report.update(tag=args.tag, poison_ratio=manifest.params.ratio)
    write_json(report, out / IMPACT_REPORT)
    write_csv(out / "impact_rows.csv",
              ["image_id", "instance_idx", "d_gt", "d_hat_clean", "d_hat_pois"],
              ([r.image_id, r.instance_idx, r.d_gt, r.d_hat_clean, r.d_hat_pois]
               for r in rep.rows))
    return report


def cmd_simulate(args) -> dict:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = _load_manifest(args.manifest)
    params = SimDetectorParams(attack_rate=args.attack_rate, height_noise=args.height_noise,
                               center_noise=args.center_noise, miss_rate=args.miss_rate,
                               confidence_range=tuple(args.confidence_range), seed=args.seed,
                               class_name=args.class_name)
    preds = simulate(manifest, params, threads=_threads(args))
    write_predictions(preds, out)
    return {"images": len(preds), "predictions": sum(len(v) for v in preds.values())}


def cmd_report(args) -> dict:
    return merge_runs([Path(p) for p in args.run_dirs], Path(args.out))


# -- parser ---------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="shrinkbox", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"shrinkbox {__version__}")
    p.add_argument("--threads", type=int, default=None,
                   help="worker threads (default: $SHRINKBOX_THREADS or cpu count)")
    p.add_argument("--replay", metavar="RUN_JSON", help="re-execute the run recorded in RUN_JSON")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command")

    s = sub.add_parser("fit", help="fit the inverse height-to-distance model")
    s.add_argument("--dataset", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--train-ids", help="file listing training image ids (default: all)")
    s.add_argument("--val-ids", help="file listing validation image ids")
    s.add_argument("--convention", choices=DISTANCE_CONVENTIONS, default="euclidean")
    s.add_argument("--no-filter", action="store_true", help="fit on every non-DontCare object")
    _add_filter_flags(s)
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("poison", help="write a poisoned copy of a dataset plus manifest")
    s.add_argument("--dataset", required=True)
    s.add_argument("--model", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--ratio", type=float, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--offset", type=float, default=5.0)
    s.add_argument("--trigger-scale", type=float, default=0.40)
    s.add_argument("--blend", type=float, default=1.0)
    s.add_argument("--min-pois-height", type=float, default=4.0)
    s.add_argument("--size-trigger-by", choices=("clean", "poisoned"), default="clean")
    s.add_argument("--trigger", help="square RGBA trigger image (default: built-in pattern)")
    s.add_argument("--ids", help="file listing image ids to include")
    s.add_argument("--convention", choices=DISTANCE_CONVENTIONS, default=None,
                   help="default: the model's convention")
    s.add_argument("--labels-only", action="store_true")
    _add_filter_flags(s)
    s.set_defaults(func=cmd_poison)

    s = sub.add_parser("eval-asr", help="attack success rate over similarity thresholds")
    s.add_argument("--predictions", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--iou-thr", type=float, default=DEFAULT_IOU_THR)
    s.add_argument("--xs", type=float, nargs="+", default=list(DEFAULT_XS))
    s.add_argument("--class", dest="class_name", default=None)
    s.add_argument("--tag", default=None)
    s.set_defaults(func=cmd_eval_asr)

    s = sub.add_parser("eval-map", help="per-class AP and mAP@0.5:0.95")
    s.add_argument("--predictions", required=True)
    s.add_argument("--labels", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--iou-thresholds", type=float, nargs="+", default=list(COCO_THRESHOLDS))
    s.add_argument("--classes", nargs="+", default=None)
    s.add_argument("--condition", choices=("clean", "pois"), default="clean",
                   help="whether the evaluated images carry triggers")
    s.add_argument("--poison-ratio", type=float, default=None)
    s.add_argument("--tag", default=None)
    s.set_defaults(func=cmd_eval_map)

    s = sub.add_parser("eval-impact", help="distance-estimation MAE with and without trigger")
    s.add_argument("--pred-clean", required=True)
    s.add_argument("--pred-pois", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--model", help="estimator model (default: the manifest's model)")
    s.add_argument("--clean-distances", help="external distances for the clean run")
    s.add_argument("--pois-distances", help="external distances for the poisoned run")
    s.add_argument("--iou-thr", type=float, default=DEFAULT_IOU_THR)
    s.add_argument("--tag", default=None)
    s.set_defaults(func=cmd_eval_impact)

    s = sub.add_parser("simulate", help="emit simulated detector predictions")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--attack-rate", type=float, default=1.0)
    s.add_argument("--height-noise", type=float, default=0.0)
    s.add_argument("--center-noise", type=float, default=0.0)
    s.add_argument("--miss-rate", type=float, default=0.0)
    s.add_argument("--confidence-range", type=float, nargs=2, default=[0.5, 1.0])
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--class", dest="class_name", default=None)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("report", help="merge eval run directories into CSV tables")
    s.add_argument("run_dirs", nargs="+")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.replay:
            run = read_json(args.replay)
            replay_argv = run.get("argv")
            if not isinstance(replay_argv, list):
                raise ValidationError(f"{args.replay}: no argv recorded")
            if args.threads:
                replay_argv = ["--threads", str(args.threads), *replay_argv]
            return main(replay_argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            return EXIT_INPUT
        if args.threads is not None and args.threads < 1:
            raise ValidationError("--threads must be >= 1")
        result = args.func(args)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_run(out, args, _strip_threads(argv))
        log.info("%s: %s", args.command, result)
    except DegenerateError as exc:
        print(f"shrinkbox: error: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except (ShrinkBoxError, OSError) as exc:
        print(f"shrinkbox: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return EXIT_OK


def _strip_threads(argv):
    # thread count never changes outputs, so it is not part of the echoed run
    out, skip = [], False
    for tok in argv:
        if skip:
            skip = False
            continue
        if tok == "--threads":
            skip = True
            continue
        if tok.startswith("--threads="):
            continue
        out.append(tok)
    return out


if __name__ == "__main__":
    sys.exit(main())
