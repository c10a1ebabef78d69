"""OTB-style dataset ingestion, one-pass evaluation, and metric curves.

A sequence directory holds img/ with zero-padded numbered frames and a
groundtruth_rect.txt of "x,y,w,h" lines (comma, tab, or space separated;
1-based coordinates). Evaluation is OPE: initialize from the first ground
truth, track once, never re-initialize. Frame 0 is excluded from every
metric count.
"""

import csv
import json
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np

from .errors import DataError
from .tracker import Rect, init_tracker, track_frame

REPORT_SCHEMA = 1

PRECISION_THRESHOLDS = np.arange(51, dtype=np.float64)          # 0..50 px
SUCCESS_THRESHOLDS = np.arange(21, dtype=np.float64) * 0.05     # 0..1

_FRAME_EXTS = (".jpg", ".jpeg", ".png", ".bmp")


@dataclass
class SequenceMeta:
    name: str
    frame_paths: list
    ground_truth: list  # Rect per frame, 0-based

    @property
    def init_rect(self):
        return self.ground_truth[0]

    def __len__(self):
        return len(self.frame_paths)


@dataclass
class EvalCurves:
    precision: np.ndarray  # 51 values at center-error thresholds 0..50 px
    success: np.ndarray    # 21 values at overlap thresholds 0..1 step 0.05
    dp20: float
    auc: float
    fps: float
    fps_with_io: float = 0.0
    forward_ratio: float = 0.0


@dataclass
class OpeResult:
    name: str
    rects: list = field(default_factory=list)
    track_seconds: float = 0.0
    wall_seconds: float = 0.0
    frames: int = 0
    forward_passes: int = 0
    single_pass_frames: int = 0
    failed: bool = False
    error: str = ""


def load_sequence(seq_dir):
    """Parse one sequence directory into frame paths + 0-based ground truth."""
    seq_dir = Path(seq_dir)
    img_dir = seq_dir / "img"
    gt_file = seq_dir / "groundtruth_rect.txt"
    if not img_dir.is_dir():
        raise DataError(f"{seq_dir}: no img/ directory")
    if not gt_file.is_file():
        raise DataError(f"{seq_dir}: no groundtruth_rect.txt")

    frames = sorted((p for p in img_dir.iterdir()
                     if p.suffix.lower() in _FRAME_EXTS and p.stem.isdigit()),
                    key=lambda p: int(p.stem))
    if not frames:
        raise DataError(f"{img_dir}: no numbered frames found")
    numbers = [int(p.stem) for p in frames]
    for prev, cur in zip(numbers, numbers[1:]):
        if cur != prev + 1:
            raise DataError(
                f"{img_dir}: missing frame {prev + 1:0{len(frames[0].stem)}d}")

    rects = []
    for lineno, line in enumerate(gt_file.read_text().splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        parts = re.split(r"[,\t ]+", line)
        try:
            if len(parts) != 4:
                raise ValueError(f"expected 4 fields, got {len(parts)}")
            x, y, w, h = (float(v) for v in parts)
        except ValueError as exc:
            raise DataError(f"{gt_file}:{lineno}: unparsable rect line ({exc})") from exc
        rects.append(Rect(x - 1.0, y - 1.0, w, h))  # 1-based file -> 0-based

    if len(rects) != len(frames):
        raise DataError(
            f"{seq_dir}: {len(frames)} frames but {len(rects)} ground-truth rects")
    if len(frames) < 2:
        raise DataError(f"{seq_dir}: a sequence needs at least 2 frames")
    return SequenceMeta(name=seq_dir.name, frame_paths=frames, ground_truth=rects)


def center_error(a, b):
    """Euclidean distance between rect centers, pixels."""
    (ax, ay), (bx, by) = a.center, b.center
    return float(np.hypot(ax - bx, ay - by))


def iou(a, b):
    """Intersection over union of two rects; 0 when disjoint."""
    ix = min(a.x + a.w, b.x + b.w) - max(a.x, b.x)
    iy = min(a.y + a.h, b.y + b.h) - max(a.y, b.y)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    return float(inter / (a.w * a.h + b.w * b.h - inter))


def _read_frame(path):
    img = cv2.imread(str(path), cv2.IMREAD_COLOR)
    if img is None:
        raise DataError(f"cannot decode frame {path}")
    return img


def run_ope(config, seq, preload=False):
    """One-pass evaluation of one sequence: init on frame 0, track the rest.

    Wall time covers frames 1..N-1 including decode; track time excludes
    decode (what --preload reports as the headline FPS).
    """
    result = OpeResult(name=seq.name, frames=len(seq))
    images = None
    try:
        if preload:
            images = [_read_frame(p) for p in seq.frame_paths]
        first = images[0] if preload else _read_frame(seq.frame_paths[0])
        state = init_tracker(first, seq.init_rect, config)
    except Exception as exc:  # recorded failure entry, do not kill the run
        result.failed = True
        result.error = f"{type(exc).__name__}: {exc}"
        return result

    result.rects.append(seq.init_rect)
    wall = time.perf_counter()
    track_elapsed = 0.0
    for i in range(1, len(seq)):
        frame = images[i] if preload else _read_frame(seq.frame_paths[i])
        t0 = time.perf_counter()
        rect = track_frame(state, frame)
        track_elapsed += time.perf_counter() - t0
        result.rects.append(rect)
    result.wall_seconds = time.perf_counter() - wall
    result.track_seconds = track_elapsed
    result.forward_passes = state.forward_passes
    result.single_pass_frames = state.single_pass_frames
    return result


def precision_curve(results, gt):
    """precision[t] = fraction of frames (excluding frame 0) with center
    error <= t, for integer thresholds t = 0..50 px."""
    if len(results) != len(gt):
        raise DataError(f"{len(results)} results vs {len(gt)} ground-truth rects")
    errors = np.array([center_error(r, g) for r, g in zip(results[1:], gt[1:])])
    return (errors[None, :] <= PRECISION_THRESHOLDS[:, None]).mean(axis=1)


def success_curve(results, gt):
    """success[s] = fraction of frames (excluding frame 0) with IoU >= s,
    for thresholds 0, 0.05, ..., 1.0."""
    if len(results) != len(gt):
        raise DataError(f"{len(results)} results vs {len(gt)} ground-truth rects")
    overlaps = np.array([iou(r, g) for r, g in zip(results[1:], gt[1:])])
    return (overlaps[None, :] >= SUCCESS_THRESHOLDS[:, None]).mean(axis=1)


def auc(success):
    """Area under the success curve: unweighted mean of its 21 values."""
    return float(np.mean(success))


def dp_at(results, gt, threshold=20.0):
    """Distance precision at a pixel threshold (20 px convention)."""
    errors = [center_error(r, g) for r, g in zip(results[1:], gt[1:])]
    if not errors:
        return 0.0
    return float(np.mean([e <= threshold for e in errors]))


def evaluate(result, gt):
    """EvalCurves for one finished OPE run."""
    prec = precision_curve(result.rects, gt)
    succ = success_curve(result.rects, gt)
    tracked = result.frames - 1
    return EvalCurves(
        precision=prec,
        success=succ,
        dp20=float(prec[20]),
        auc=auc(succ),
        fps=tracked / result.track_seconds if result.track_seconds > 0 else 0.0,
        fps_with_io=tracked / result.wall_seconds if result.wall_seconds > 0 else 0.0,
        forward_ratio=result.forward_passes / result.frames if result.frames else 0.0)


def discover_sequences(dataset_dir):
    dataset_dir = Path(dataset_dir)
    seqs = sorted(d for d in dataset_dir.iterdir()
                  if d.is_dir() and (d / "groundtruth_rect.txt").is_file())
    if not seqs:
        raise DataError(f"{dataset_dir}: no sequence directories found")
    return seqs


def run_benchmark(dataset_dir, config, preload=False, jobs=1):
    """OPE over every sequence in a dataset directory; returns a report dict.

    Sequences share the immutable network/adapter weights; each gets a fresh
    tracker. Publication-style FPS numbers should use jobs=1.
    """
    seq_dirs = discover_sequences(dataset_dir)
    metas = [load_sequence(d) for d in seq_dirs]

    def one(meta):
        return run_ope(config, meta, preload=preload)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(one, metas))
    else:
        results = [one(meta) for meta in metas]
    return build_report(metas, results)


def build_report(metas, results):
    sequences = []
    curves = []
    for meta, res in zip(metas, results):
        if res.failed:
            sequences.append({"name": res.name, "failed": True, "error": res.error})
            continue
        ev = evaluate(res, meta.ground_truth)
        curves.append(ev)
        sequences.append({
            "name": res.name,
            "failed": False,
            "frames": res.frames,
            "forward_passes": res.forward_passes,
            "single_pass_frames": res.single_pass_frames,
            "forward_ratio": ev.forward_ratio,
            "dp20": ev.dp20,
            "auc": ev.auc,
            "fps": ev.fps,
            "fps_with_io": ev.fps_with_io,
            "precision": [float(v) for v in ev.precision],
            "success": [float(v) for v in ev.success],
        })
    report = {"schema": REPORT_SCHEMA, "sequences": sequences}
    if curves:
        report["aggregate"] = {
            "sequences": len(curves),
            "precision": [float(v) for v in np.mean([c.precision for c in curves], axis=0)],
            "success": [float(v) for v in np.mean([c.success for c in curves], axis=0)],
            "dp20": float(np.mean([c.dp20 for c in curves])),
            "auc": float(np.mean([c.auc for c in curves])),
            "fps": float(np.mean([c.fps for c in curves])),
            "fps_with_io": float(np.mean([c.fps_with_io for c in curves])),
            "forward_ratio": float(np.mean([c.forward_ratio for c in curves])),
        }
    return report


def write_report(path, report):
    """Serialize a report; identical inputs produce identical bytes."""
    Path(path).write_text(json.dumps(report, indent=1, sort_keys=True))
    return Path(path)


def read_report(path):
    try:
        report = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: cannot read report ({exc})") from exc
    if report.get("schema") != REPORT_SCHEMA:
        raise DataError(f"{path}: unsupported report schema {report.get('schema')!r}")
    return report


def emit_plot_data(curves, out_dir, prefix=""):
    """CSV tables (threshold,value rows) for external plotting."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for stem, thresholds, values in (
            ("precision", PRECISION_THRESHOLDS, curves.precision),
            ("success", SUCCESS_THRESHOLDS, curves.success)):
        path = out_dir / f"{prefix}{stem}.csv"
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["threshold", "value"])
            for t, v in zip(thresholds, values):
                writer.writerow([f"{t:g}", f"{float(v):.6f}"])
        written.append(path)
    return written
