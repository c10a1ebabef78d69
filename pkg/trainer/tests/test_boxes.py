"""Default-box grids and the matching rules."""

import numpy as np
import pytest

from cftrain.boxes import build_default_boxes, iou_matrix, match_boxes


def match_oracle(boxes, gts, threshold):
    """Exhaustive restatement of the documented matching rule."""
    m = np.zeros((len(boxes), len(gts)), dtype=np.int8)
    ious = iou_matrix(boxes, gts)
    for i in range(len(boxes)):
        j = int(np.argmax(ious[i]))
        if ious[i, j] >= threshold:
            m[i, j] = 1
    for j in range(len(gts)):
        top = ious[:, j].max()
        tied = [i for i in range(len(boxes)) if ious[i, j] >= top - 1e-9]
        gc = gts[j, :2] + gts[j, 2:] / 2
        best, dist = None, None
        for i in tied:
            bc = boxes[i, :2] + boxes[i, 2:] / 2
            d = float(((bc - gc) ** 2).sum())
            if dist is None or d < dist:
                best, dist = i, d
        m[best, :] = 0
        m[best, j] = 1
    return m


class TestGrid:
    def test_one_box_per_cell(self):
        grid = build_default_boxes(224, 4, 100.0)
        assert grid.boxes.shape == (56 * 56, 4)
        assert grid.grid_h == grid.grid_w == 56
        # first box centered on the first cell's pixel
        np.testing.assert_allclose(grid.centers[0], [2.0, 2.0])
        assert (grid.boxes[:, 2] == 100.0).all() and (grid.boxes[:, 3] == 100.0).all()

    def test_row_major_ordering(self):
        grid = build_default_boxes(16, 4, 8.0)
        np.testing.assert_allclose(grid.centers[1], [6.0, 2.0])   # next column
        np.testing.assert_allclose(grid.centers[4], [2.0, 6.0])   # next row


class TestIouMatrix:
    def test_values(self):
        a = np.array([[0, 0, 2, 2]], dtype=float)
        b = np.array([[0, 0, 2, 2], [1, 0, 2, 2], [10, 10, 1, 1]], dtype=float)
        got = iou_matrix(a, b)[0]
        np.testing.assert_allclose(got, [1.0, 1 / 3, 0.0])


class TestMatchBoxes:
    def test_exact_overlap_matches(self):
        boxes = np.array([[0, 0, 10, 10], [50, 50, 10, 10]], dtype=float)
        gts = np.array([[0, 0, 10, 10]], dtype=float)
        m = match_boxes(boxes, gts, 0.5)
        assert m[0, 0] == 1 and m.sum() == 1

    def test_no_gt_all_zero(self):
        boxes = np.array([[0, 0, 10, 10]], dtype=float)
        m = match_boxes(boxes, np.zeros((0, 4)), 0.5)
        assert m.shape == (1, 0) and m.sum() == 0

    def test_best_per_gt_forced_below_threshold(self):
        boxes = np.array([[0, 0, 10, 10], [40, 0, 10, 10]], dtype=float)
        gts = np.array([[8, 0, 10, 10]], dtype=float)  # iou 0.11 with box0
        m = match_boxes(boxes, gts, 0.5)
        assert m[0, 0] == 1 and m.sum() == 1

    def test_tie_breaks_toward_nearest_center(self):
        # the gt sits fully inside both candidate defaults: identical IoU,
        # so a plain argmax would pick index 0; the nearer center must win
        boxes = np.array([[0, 0, 40, 40], [6, 0, 40, 40]], dtype=float)
        gts = np.array([[16, 10, 20, 20]], dtype=float)  # center (26, 20)
        m = match_boxes(boxes, gts, 0.9)
        assert m[1, 0] == 1 and m[0, 0] == 0

    def test_each_default_matches_at_most_one_gt(self, rng):
        grid = build_default_boxes(32, 4, 12.0)
        gts = np.stack([rng.uniform(0, 20, size=2).round() for _ in range(3)])
        gts = np.concatenate([gts, np.full((3, 2), 12.0)], axis=1)
        m = match_boxes(grid, gts, 0.5)
        assert (m.sum(axis=1) <= 1).all()

    def test_matches_exhaustive_oracle(self, rng):
        for _ in range(25):
            boxes = np.concatenate(
                [rng.uniform(0, 40, size=(8, 2)), rng.uniform(4, 20, size=(8, 2))],
                axis=1)
            gts = np.concatenate(
                [rng.uniform(0, 40, size=(2, 2)), rng.uniform(4, 20, size=(2, 2))],
                axis=1)
            got = match_boxes(boxes, gts, 0.4)
            ref = match_oracle(boxes, gts, 0.4)
            np.testing.assert_array_equal(got, ref)

    def test_threshold_validated(self):
        with pytest.raises(ValueError):
            match_boxes(np.zeros((1, 4)), np.zeros((1, 4)), 0.0)
