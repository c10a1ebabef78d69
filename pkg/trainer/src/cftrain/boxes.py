"""Default boxes and matching.

One box type only: the tracker's search window has a fixed size, so a single
grid of fixed-size anchors (one per feature cell) replaces the usual
multi-scale/multi-aspect pyramid. Boxes are (x, y, w, h) rows, top-left plus
size, in input-image pixels.
"""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class DefaultBoxGrid:
    boxes: np.ndarray      # (N, 4) float32 rows x,y,w,h
    grid_h: int
    grid_w: int
    stride: int
    box_side: float

    @property
    def centers(self):
        return self.boxes[:, :2] + self.boxes[:, 2:] / 2.0


def build_default_boxes(image_side, stride, box_side):
    """One fixed-size box per feature cell, centered on the cell's pixel."""
    cells = image_side // stride
    cy, cx = np.meshgrid(np.arange(cells), np.arange(cells), indexing="ij")
    centers_x = (cx.ravel() + 0.5) * stride
    centers_y = (cy.ravel() + 0.5) * stride
    boxes = np.stack([centers_x - box_side / 2.0, centers_y - box_side / 2.0,
                      np.full(cells * cells, box_side),
                      np.full(cells * cells, box_side)], axis=1).astype(np.float32)
    return DefaultBoxGrid(boxes=boxes, grid_h=cells, grid_w=cells,
                          stride=stride, box_side=float(box_side))


def iou_matrix(a, b):
    """Pairwise IoU between (N,4) and (M,4) box arrays."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    ax2, ay2 = a[:, 0] + a[:, 2], a[:, 1] + a[:, 3]
    bx2, by2 = b[:, 0] + b[:, 2], b[:, 1] + b[:, 3]
    ix = np.minimum(ax2[:, None], bx2[None, :]) - np.maximum(a[:, None, 0], b[None, :, 0])
    iy = np.minimum(ay2[:, None], by2[None, :]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.clip(ix, 0, None) * np.clip(iy, 0, None)
    areas = a[:, 2] * a[:, 3]
    areab = b[:, 2] * b[:, 3]
    union = areas[:, None] + areab[None, :] - inter
    return np.where(union > 0, inter / union, 0.0)


def match_boxes(defaults, gts, iou_threshold=0.5):
    """0/1 match matrix m[i][j] between default boxes and ground truths.

    A default matches its best-overlap ground truth when the IoU clears the
    threshold; additionally the best default for each ground truth is forced
    to match even below threshold, so no object goes unmatched. IoU ties
    (an object contained in several same-size defaults scores identically)
    break toward the default whose center is nearest the ground truth's.
    Each default matches at most one ground truth.
    """
    if not 0.0 < iou_threshold < 1.0:
        raise ValueError("iou_threshold must lie in (0, 1)")
    boxes = defaults.boxes if isinstance(defaults, DefaultBoxGrid) else np.asarray(defaults)
    boxes = np.asarray(boxes, dtype=np.float64)
    gts = np.asarray(gts, dtype=np.float64).reshape(-1, 4)
    m = np.zeros((len(boxes), len(gts)), dtype=np.int8)
    if len(gts) == 0:
        return m
    overlaps = iou_matrix(boxes, gts)
    centers = boxes[:, :2] + boxes[:, 2:] / 2.0
    gt_centers = gts[:, :2] + gts[:, 2:] / 2.0
    dist2 = ((centers[:, None, :] - gt_centers[None, :, :]) ** 2).sum(axis=2)
    best_gt = overlaps.argmax(axis=1)
    hit = overlaps[np.arange(len(boxes)), best_gt] >= iou_threshold
    m[np.arange(len(boxes))[hit], best_gt[hit]] = 1
    for j in range(len(gts)):
        top = overlaps[:, j].max()
        tied = np.nonzero(overlaps[:, j] >= top - 1e-9)[0]
        i = tied[dist2[tied, j].argmin()]
        m[i, :] = 0  # forced assignment overrides; one gt per default
        m[i, j] = 1
    return m
