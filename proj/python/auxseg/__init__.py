"""Semantic segmentation with an auxiliary depth task and adaptive loss weighting."""

from ._core import (
    CLASS_NAMES,
    Dataset,
    Model,
    TrainResult,
    build_model,
    combine,
    gen_scene,
    iou_metrics,
    load_checkpoint,
    load_dataset,
    make_splits,
    run_cli,
    train,
    variants,
)

__version__ = "0.1.0"

__all__ = [
    "CLASS_NAMES",
    "Dataset",
    "Model",
    "TrainResult",
    "build_model",
    "combine",
    "gen_scene",
    "iou_metrics",
    "load_checkpoint",
    "load_dataset",
    "make_splits",
    "run_cli",
    "train",
    "variants",
]
