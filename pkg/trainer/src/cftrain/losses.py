"""Training losses: smooth L1 on center displacements plus 2-class objectness
cross-entropy with hard negative mining, normalized by the match count.

Displacements stay in input-pixel units; with one fixed-size box type there
is nothing to normalize the regression targets against.
"""

import numpy as np
import torch


def smooth_l1(d):
    """0.5*d^2 for |d| < 1, |d| - 0.5 otherwise (elementwise)."""
    d = d if torch.is_tensor(d) else torch.as_tensor(d, dtype=torch.float64)
    a = d.abs()
    return torch.where(a < 1.0, 0.5 * d * d, a - 0.5)


def location_loss(m, pred_centers, gt_centers):
    """Sum of smooth L1 over matched pairs and both displacement axes.

    pred_centers: (N,2) predicted box centers; gt_centers: (M,2).
    """
    m = torch.as_tensor(np.asarray(m))
    if m.sum() == 0:
        return pred_centers.sum() * 0.0
    idx_i, idx_j = torch.nonzero(m, as_tuple=True)
    diff = pred_centers[idx_i] - gt_centers[idx_j]
    return smooth_l1(diff).sum()


def confidence_loss(m, logits, neg_ratio=3):
    """2-class softmax cross-entropy over positives plus mined negatives.

    logits: (N,2) rows (background, object). Negatives are the unmatched
    cells with the highest background loss, at most neg_ratio per positive;
    with no positives every cell counts as a negative.
    """
    m = torch.as_tensor(np.asarray(m))
    positive = m.sum(dim=1) > 0
    log_p = torch.log_softmax(logits, dim=1)
    pos_loss = -log_p[positive, 1].sum()
    neg_losses = -log_p[~positive, 0]
    n_pos = int(positive.sum())
    if n_pos == 0:
        return neg_losses.sum()
    n_neg = min(int(neg_losses.numel()), neg_ratio * n_pos)
    if n_neg > 0:
        neg_losses, _ = neg_losses.sort(descending=True)
        pos_loss = pos_loss + neg_losses[:n_neg].sum()
    return pos_loss


def total_loss(m, logits, pred_centers, gt_centers, alpha=1.0, neg_ratio=3):
    """(L_conf + alpha * L_loc) / N with N the matched-pair count.

    N == 0 falls back to the confidence loss over negatives alone (there is
    nothing to localize and nothing to normalize by).
    """
    n = float(np.asarray(m).sum())
    conf = confidence_loss(m, logits, neg_ratio=neg_ratio)
    if n == 0:
        return conf
    loc = location_loss(m, pred_centers, gt_centers)
    return (conf + alpha * loc) / n
