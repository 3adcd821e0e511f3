"""Box-shrinking backdoor poisoning and evaluation for KITTI-format detection data."""

__version__ = "0.1.0"

from .geometry import BBox, iou, shrink_about_center
from .distance_model import HDSample, InverseHeightModel, estimate, fit, invert, model_mae
from .poison import (EligibilityFilter, PoisonManifest, PoisonParams, PoisonRecord,
                     filter_eligible, poison_dataset, select_instances, shrink_instance)
from .metrics import (asr_at, asr_curve, average_precision, match_predictions, success)
from .impact import ModelEstimator, FileDistanceEstimator, evaluate_impact
from .detector_sim import SimDetectorParams, simulate

__all__ = [
    "BBox", "iou", "shrink_about_center",
    "HDSample", "InverseHeightModel", "estimate", "fit", "invert", "model_mae",
    "EligibilityFilter", "PoisonManifest", "PoisonParams", "PoisonRecord",
    "filter_eligible", "poison_dataset", "select_instances", "shrink_instance",
    "asr_at", "asr_curve", "average_precision", "match_predictions", "success",
    "ModelEstimator", "FileDistanceEstimator", "evaluate_impact",
    "SimDetectorParams", "simulate",
]
