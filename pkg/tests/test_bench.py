"""Dataset loading, metrics, OPE runs, and report round trips."""

import numpy as np
import pytest

from cftrack.bench import (EvalCurves, auc, build_report, center_error, dp_at,
                           evaluate, iou, load_sequence, precision_curve,
                           read_report, run_benchmark, run_ope, success_curve,
                           write_report, OpeResult)
from cftrack.errors import DataError
from cftrack.tracker import Rect
from tests.conftest import make_scene, raw_pixel_config, write_sequence


class TestLoadSequence:
    def test_toy_dir_offsets(self, tmp_path):
        frames, _ = make_scene(3, image_hw=(60, 80), patch=16, start=(10, 20))
        rects = [Rect(9, 19, 30, 40)] * 3  # file will carry 10,20,30,40
        seq = write_sequence(tmp_path / "toy", frames, rects)
        meta = load_sequence(seq)
        assert meta.name == "toy" and len(meta) == 3
        r = meta.ground_truth[0]
        assert (r.x, r.y, r.w, r.h) == (9.0, 19.0, 30.0, 40.0)

    def test_tab_separated(self, tmp_path):
        frames, rects = make_scene(2, image_hw=(40, 40), patch=10)
        seq = write_sequence(tmp_path / "toy", frames, rects)
        text = (seq / "groundtruth_rect.txt").read_text().replace(",", "\t")
        (seq / "groundtruth_rect.txt").write_text(text)
        meta = load_sequence(seq)
        assert meta.ground_truth[0].w == rects[0].w

    def test_missing_frame_named(self, tmp_path):
        frames, rects = make_scene(3, image_hw=(40, 40), patch=10)
        seq = write_sequence(tmp_path / "toy", frames, rects)
        (seq / "img" / "0002.png").unlink()
        with pytest.raises(DataError, match="0002"):
            load_sequence(seq)

    def test_bad_line_reports_number(self, tmp_path):
        frames, rects = make_scene(2, image_hw=(40, 40), patch=10)
        seq = write_sequence(tmp_path / "toy", frames, rects)
        (seq / "groundtruth_rect.txt").write_text("10,20,30,40\n10,zz,30,40\n")
        with pytest.raises(DataError, match=":2"):
            load_sequence(seq)

    def test_count_mismatch(self, tmp_path):
        frames, rects = make_scene(3, image_hw=(40, 40), patch=10)
        seq = write_sequence(tmp_path / "toy", frames, rects)
        (seq / "groundtruth_rect.txt").write_text("10,20,30,40\n")
        with pytest.raises(DataError, match="ground-truth"):
            load_sequence(seq)


class TestMetrics:
    def test_center_error_cases(self, rng):
        a = Rect(0, 0, 10, 10)
        assert center_error(a, a) == 0.0
        b = Rect(3, 4, 10, 10)
        assert abs(center_error(a, b) - 5.0) < 1e-12
        for _ in range(20):
            r1 = Rect(*rng.uniform(0, 50, 4))
            r2 = Rect(*rng.uniform(0, 50, 4))
            dx = (r1.x + r1.w / 2) - (r2.x + r2.w / 2)
            dy = (r1.y + r1.h / 2) - (r2.y + r2.h / 2)
            assert abs(center_error(r1, r2) - np.sqrt(dx * dx + dy * dy)) < 1e-9

    def test_iou_cases(self):
        a = Rect(0, 0, 2, 2)
        assert iou(a, a) == 1.0
        assert iou(a, Rect(10, 10, 2, 2)) == 0.0
        assert abs(iou(a, Rect(1, 0, 2, 2)) - 1.0 / 3.0) < 1e-12

    def test_counted_toy_curves(self):
        gt = [Rect(0, 0, 10, 10)] * 4
        results = [gt[0],
                   Rect(5, 0, 10, 10),    # error 5
                   Rect(15, 0, 10, 10),   # error 15
                   Rect(25, 0, 10, 10)]   # error 25
        prec = precision_curve(results, gt)
        assert prec[4] == 0.0
        assert prec[5] == pytest.approx(1 / 3)
        assert prec[15] == pytest.approx(2 / 3)
        assert dp_at(results, gt, 20.0) == pytest.approx(2 / 3)
        assert prec[20] == dp_at(results, gt, 20.0)
        assert prec[25] == 1.0 and prec[50] == 1.0

    def test_perfect_and_worst_cases(self):
        gt = [Rect(i, i, 8.0, 8.0) for i in range(5)]
        prec = precision_curve(gt, gt)
        succ = success_curve(gt, gt)
        assert (prec == 1.0).all()
        assert (succ == 1.0).all()          # iou >= 1.0 holds for exact match
        assert auc(succ) == 1.0
        far = [Rect(1000 + 60 * i, 1000, 8.0, 8.0) for i in range(5)]
        prec_bad = precision_curve(far, gt)
        succ_bad = success_curve(far, gt)
        assert dp_at(far, gt) == 0.0 and prec_bad[50] == 0.0
        assert succ_bad[0] == 1.0           # iou >= 0 always holds
        assert (succ_bad[1:] == 0.0).all()
        assert auc(succ_bad) == pytest.approx(1 / 21)

    def test_monotonicity_random(self, rng):
        for _ in range(30):
            n = int(rng.integers(3, 20))
            gt = [Rect(*rng.uniform(0, 80, 2), *rng.uniform(4, 30, 2)) for _ in range(n)]
            res = [Rect(*rng.uniform(0, 80, 2), *rng.uniform(4, 30, 2)) for _ in range(n)]
            prec = precision_curve(res, gt)
            succ = success_curve(res, gt)
            assert (np.diff(prec) >= 0).all()
            assert (np.diff(succ) <= 0).all()
            assert prec.min() >= 0 and prec.max() <= 1
            assert succ.min() >= 0 and succ.max() <= 1
            assert 0.0 <= auc(succ) <= 1.0

    def test_frame_zero_excluded(self):
        gt = [Rect(0, 0, 10, 10), Rect(0, 0, 10, 10)]
        results = [Rect(500, 500, 10, 10), gt[1]]  # terrible frame 0 ignored
        assert precision_curve(results, gt)[0] == 1.0

    def test_length_mismatch(self):
        with pytest.raises(DataError):
            precision_curve([Rect(0, 0, 1, 1)], [Rect(0, 0, 1, 1)] * 2)


class TestOpe:
    def test_two_frame_static(self, tmp_path):
        frames, rects = make_scene(2, step=(0, 0))
        meta = load_sequence(write_sequence(tmp_path / "static", frames, rects))
        result = run_ope(raw_pixel_config(), meta)
        assert not result.failed
        assert len(result.rects) == 2
        assert center_error(result.rects[1], rects[1]) <= 1.0

    def test_deterministic(self, tmp_path):
        frames, rects = make_scene(5, step=(2, 0))
        meta = load_sequence(write_sequence(tmp_path / "move", frames, rects))
        r1 = run_ope(raw_pixel_config(), meta)
        r2 = run_ope(raw_pixel_config(), meta)
        for a, b in zip(r1.rects, r2.rects):
            assert (a.x, a.y, a.w, a.h) == (b.x, b.y, b.w, b.h)

    def test_preload_matches(self, tmp_path):
        frames, rects = make_scene(4, step=(1, 1))
        meta = load_sequence(write_sequence(tmp_path / "move", frames, rects))
        r1 = run_ope(raw_pixel_config(), meta, preload=False)
        r2 = run_ope(raw_pixel_config(), meta, preload=True)
        for a, b in zip(r1.rects, r2.rects):
            assert (a.x, a.y, a.w, a.h) == (b.x, b.y, b.w, b.h)

    def test_init_failure_recorded(self, tmp_path):
        frames, rects = make_scene(2)
        rects = [Rect(5, 5, 2, 2)] * 2  # degenerate init rect
        meta = load_sequence(write_sequence(tmp_path / "bad", frames, rects))
        result = run_ope(raw_pixel_config(), meta)
        assert result.failed and "degenerate" in result.error


class TestReports:
    def _report(self, tmp_path, n_seqs=2):
        metas, results = [], []
        for i in range(n_seqs):
            frames, rects = make_scene(4, step=(1, 0), seed=i)
            meta = load_sequence(write_sequence(tmp_path / f"s{i}", frames, rects))
            metas.append(meta)
            results.append(run_ope(raw_pixel_config(), meta))
        return build_report(metas, results)

    def test_round_trip_identical(self, tmp_path):
        report = self._report(tmp_path)
        path = write_report(tmp_path / "report.json", report)
        loaded = read_report(path)
        assert loaded["aggregate"] == report["aggregate"]
        path2 = write_report(tmp_path / "report2.json", loaded)
        assert path.read_text() == path2.read_text()

    def test_aggregate_of_identical_sequences(self, tmp_path):
        frames, rects = make_scene(4, step=(1, 0))
        metas, results = [], []
        for i in range(2):
            meta = load_sequence(write_sequence(tmp_path / f"dup{i}", frames, rects))
            metas.append(meta)
            results.append(run_ope(raw_pixel_config(), meta))
        report = build_report(metas, results)
        agg = report["aggregate"]
        seq = report["sequences"][0]
        np.testing.assert_allclose(agg["precision"], seq["precision"], atol=1e-12)
        np.testing.assert_allclose(agg["success"], seq["success"], atol=1e-12)
        assert agg["dp20"] == pytest.approx(seq["dp20"])

    def test_perfect_sequence_auc_one(self):
        gt = [Rect(float(i), 0, 10, 10) for i in range(4)]
        fake = OpeResult(name="perfect", rects=list(gt), frames=4,
                         track_seconds=0.1, wall_seconds=0.1, forward_passes=5)
        meta = type("M", (), {"ground_truth": gt, "name": "perfect"})()
        report = build_report([meta], [fake])
        assert report["aggregate"]["auc"] == 1.0

    def test_forward_ratio_reported(self, tmp_path):
        report = self._report(tmp_path, n_seqs=1)
        seq = report["sequences"][0]
        assert 1.0 <= seq["forward_ratio"] <= 2.0

    def test_benchmark_parallel_matches_serial(self, tmp_path):
        for i in range(3):
            frames, rects = make_scene(4, step=(1, 0), seed=10 + i)
            write_sequence(tmp_path / f"seq{i}", frames, rects)
        serial = run_benchmark(tmp_path, raw_pixel_config(), jobs=1)
        parallel = run_benchmark(tmp_path, raw_pixel_config(), jobs=3)
        for a, b in zip(serial["sequences"], parallel["sequences"]):
            assert a["precision"] == b["precision"]
            assert a["success"] == b["success"]
