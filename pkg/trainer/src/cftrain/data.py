"""Training data: images with per-image box annotations, plus a synthetic
composite generator for desk-scale runs.

Annotation format: next to every image sits a .txt of lines "x,y,w,h,label"
(0-based pixels, label 1 for objects).
"""

from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

_IMG_EXTS = (".jpg", ".jpeg", ".png", ".bmp")


@dataclass
class TrainSample:
    image: np.ndarray   # (H,W,3) uint8, BGR
    boxes: np.ndarray   # (M,4) float32 rows x,y,w,h
    labels: np.ndarray  # (M,) int


def _clamp_boxes(boxes, h, w):
    out = []
    for x, y, bw, bh in boxes:
        x2, y2 = min(x + bw, w), min(y + bh, h)
        x, y = max(x, 0.0), max(y, 0.0)
        if x2 - x > 1 and y2 - y > 1:
            out.append((x, y, x2 - x, y2 - y))
    return np.array(out, dtype=np.float32).reshape(-1, 4)


def load_dataset(data_dir):
    """All annotated images under a directory, sorted by name."""
    data_dir = Path(data_dir)
    samples = []
    for img_path in sorted(p for p in data_dir.iterdir() if p.suffix.lower() in _IMG_EXTS):
        ann_path = img_path.with_suffix(".txt")
        if not ann_path.exists():
            raise FileNotFoundError(f"no annotation file for {img_path}")
        image = cv2.imread(str(img_path), cv2.IMREAD_COLOR)
        if image is None:
            raise IOError(f"cannot decode {img_path}")
        boxes, labels = [], []
        for line in ann_path.read_text().splitlines():
            line = line.strip()
            if not line:
                continue
            x, y, w, h, label = (float(v) for v in line.split(","))
            boxes.append((x, y, w, h))
            labels.append(int(label))
        clamped = _clamp_boxes(boxes, image.shape[0], image.shape[1])
        samples.append(TrainSample(image=image, boxes=clamped,
                                   labels=np.array(labels[:len(clamped)], dtype=int)))
    if not samples:
        raise FileNotFoundError(f"no annotated images under {data_dir}")
    return samples


def make_composites(out_dir, count, image_side=224, object_side=64, seed=0):
    """Write synthetic training images: one textured object pasted on a
    textured background per image, with its annotation file."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    for i in range(count):
        bg = rng.uniform(40, 160, size=(image_side, image_side, 3)).astype(np.float32)
        bg = cv2.GaussianBlur(bg, (0, 0), 3.0)
        obj = rng.uniform(0, 255, size=(object_side, object_side, 3)).astype(np.float32)
        obj = cv2.GaussianBlur(obj, (0, 0), 1.0)
        x = int(rng.integers(0, image_side - object_side))
        y = int(rng.integers(0, image_side - object_side))
        bg[y:y + object_side, x:x + object_side] = obj
        img_path = out_dir / f"sample_{i:04d}.png"
        cv2.imwrite(str(img_path), bg.astype(np.uint8))
        img_path.with_suffix(".txt").write_text(
            f"{x},{y},{object_side},{object_side},1\n")
    return out_dir
