"""Offline trainer and exporter for the tracking adaptation layer."""

from .boxes import DefaultBoxGrid, build_default_boxes, iou_matrix, match_boxes
from .data import TrainSample, load_dataset, make_composites
from .export import export_adapter, export_backbone, verify_backbone_export
from .losses import confidence_loss, location_loss, smooth_l1, total_loss
from .model import (AdaptBranch, BranchHead, TrackingBranch, backbone_prefix,
                    extract_tap)
from .train import Hyperparams, TrainLog, backbone_fingerprint, train_branch

__version__ = "0.1.0"
