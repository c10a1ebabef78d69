"""Branch training: SGD with momentum over one tap's adaptation conv + head,
the backbone frozen throughout.

The backbone never receives gradients, so every sample's tap features are
precomputed once and the optimization loop touches only the branch -- steps
cost milliseconds instead of a full VGG forward.
"""

import math
from dataclasses import dataclass, field

import cv2
import numpy as np
import torch
from torch.optim import SGD

from .boxes import build_default_boxes, match_boxes
from .losses import total_loss
from .model import (TAP_STRIDES, TrackingBranch, backbone_prefix, extract_tap)
from .export import torch_probe_input


@dataclass
class TrainLog:
    tap: str
    losses: list = field(default_factory=list)  # (step, loss) pairs

    @property
    def first(self):
        return self.losses[0][1]

    @property
    def last(self):
        return self.losses[-1][1]


@dataclass
class Hyperparams:
    steps: int = 200
    lr: float = 1e-3
    momentum: float = 0.9
    alpha: float = 1.0
    box_side: float = 100.0
    iou_threshold: float = 0.5
    scales: tuple = (3, 5)
    image_side: int = 224
    displacement_scale: float = 4.0
    neg_ratio: int = 3
    clip_grad: float = 2.0   # localization gradients spiral without a ceiling
    lr_decay: float = 0.1    # step decay applied once, at lr_decay_at * steps
    lr_decay_at: float = 0.7
    seed: int = 0


def _resize_sample(sample, side):
    h, w = sample.image.shape[:2]
    if (h, w) == (side, side):
        return sample.image, sample.boxes
    image = cv2.resize(sample.image, (side, side), interpolation=cv2.INTER_LINEAR)
    scale = np.array([side / w, side / h, side / w, side / h], dtype=np.float32)
    return image, sample.boxes * scale


def prepare_features(samples, prefix, pretrained_layout, tap, image_side):
    """Frozen-backbone tap features plus scaled object boxes, per sample."""
    feats, boxes = [], []
    for sample in samples:
        image, scaled = _resize_sample(sample, image_side)
        torch_in = torch_probe_input(image, pretrained_layout)
        feats.append(extract_tap(prefix, torch_in, tap))
        if len(scaled):
            boxes.append(scaled[sample.labels[:len(scaled)] == 1])
        else:
            boxes.append(scaled)
    return feats, boxes


def train_branch(tap, samples, backbone_src="random:0", hyper=None):
    """Optimize one tracking branch on annotated samples.

    backbone_src: spec string for backbone_prefix(), or an already built
    (prefix, pretrained_layout) pair. Returns (TrackingBranch, TrainLog);
    the caller exports branch.adapt and discards the head. Raises
    RuntimeError if the loss ever goes non-finite.
    """
    hyper = hyper or Hyperparams()
    if isinstance(backbone_src, str):
        prefix, pretrained_layout = backbone_prefix(backbone_src)
    else:
        prefix, pretrained_layout = backbone_src
    feats, gt_boxes = prepare_features(samples, prefix, pretrained_layout,
                                       tap, hyper.image_side)
    defaults = build_default_boxes(hyper.image_side, TAP_STRIDES[tap], hyper.box_side)
    matches = [match_boxes(defaults, b, hyper.iou_threshold) if len(b)
               else np.zeros((len(defaults.boxes), 0), dtype=np.int8)
               for b in gt_boxes]
    centers = torch.from_numpy(defaults.centers.astype(np.float32))
    gt_centers = [torch.from_numpy((b[:, :2] + b[:, 2:] / 2).astype(np.float32))
                  for b in gt_boxes]

    torch.manual_seed(hyper.seed)
    branch = TrackingBranch(tap, scales=hyper.scales,
                            displacement_scale=hyper.displacement_scale)
    optimizer = SGD(branch.parameters(), lr=hyper.lr, momentum=hyper.momentum)
    log = TrainLog(tap=tap)
    decay_step = int(hyper.lr_decay_at * hyper.steps)
    for step in range(hyper.steps):
        if hyper.lr_decay and step == decay_step and step > 0:
            for group in optimizer.param_groups:
                group["lr"] *= hyper.lr_decay
        i = step % len(feats)
        _, offsets, logits = branch(feats[i])
        n = offsets.shape[2] * offsets.shape[3]
        pred_centers = centers + offsets[0].permute(1, 2, 0).reshape(n, 2)
        logit_rows = logits[0].permute(1, 2, 0).reshape(n, 2)
        loss = total_loss(matches[i], logit_rows, pred_centers, gt_centers[i],
                          alpha=hyper.alpha, neg_ratio=hyper.neg_ratio)
        value = float(loss.detach())
        if not math.isfinite(value):
            raise RuntimeError(f"training diverged: non-finite loss at step {step}")
        log.losses.append((step, value))
        optimizer.zero_grad()
        loss.backward()
        if hyper.clip_grad:
            torch.nn.utils.clip_grad_norm_(branch.parameters(), hyper.clip_grad)
        optimizer.step()
    return branch, log


def backbone_fingerprint(prefix):
    """Bitwise digest of every backbone parameter (freeze verification)."""
    import hashlib
    digest = hashlib.sha256()
    for p in prefix.parameters():
        digest.update(p.detach().numpy().tobytes())
    return digest.hexdigest()
