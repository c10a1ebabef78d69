"""Shared fixtures: synthetic scenes, toy networks, on-disk sequences."""

import cv2
import numpy as np
import pytest

from cftrack.runtime import identity_network
from cftrack.adaptation import identity_banks
from cftrack.tracker import Rect, TrackerConfig


def smooth_noise(rng, h, w, blur=5, lo=0, hi=255):
    """Blurred uniform noise, uint8; textured enough to correlate against."""
    img = rng.uniform(lo, hi, size=(h, w, 3)).astype(np.float32)
    img = cv2.GaussianBlur(img, (0, 0), sigmaX=blur / 3.0)
    span = img.max() - img.min()
    img = (img - img.min()) / (span if span > 0 else 1.0)
    return (lo + img * (hi - lo)).astype(np.uint8)


def make_scene(n_frames, image_hw=(200, 200), patch=64, start=(20, 68),
               step=(2, 0), seed=0, jumps=None):
    """Textured patch translating over a textured background.

    jumps: optional {frame_index: (dx, dy)} applied on top of the step.
    Returns (frames, rects) with one 0-based Rect per frame.
    """
    rng = np.random.default_rng(seed)
    h, w = image_hw
    bg = smooth_noise(rng, h, w, blur=9, lo=40, hi=160)
    tex = smooth_noise(rng, patch, patch, blur=2, lo=0, hi=255)
    frames, rects = [], []
    x, y = start
    for i in range(n_frames):
        if i > 0:
            x += step[0]
            y += step[1]
            if jumps and i in jumps:
                x += jumps[i][0]
                y += jumps[i][1]
        x = int(np.clip(x, 0, w - patch))
        y = int(np.clip(y, 0, h - patch))
        frame = bg.copy()
        frame[y:y + patch, x:x + patch] = tex
        frames.append(frame)
        rects.append(Rect(float(x), float(y), float(patch), float(patch)))
    return frames, rects


def write_sequence(seq_dir, frames, rects):
    """Write frames + ground truth in the on-disk layout load_sequence reads
    (coordinates go to the file 1-based)."""
    img_dir = seq_dir / "img"
    img_dir.mkdir(parents=True)
    for i, frame in enumerate(frames):
        cv2.imwrite(str(img_dir / f"{i + 1:04d}.png"), frame)
    lines = [f"{r.x + 1:.0f},{r.y + 1:.0f},{r.w:.0f},{r.h:.0f}" for r in rects]
    (seq_dir / "groundtruth_rect.txt").write_text("\n".join(lines) + "\n")
    return seq_dir


def raw_pixel_config(**overrides):
    """Tracker config on raw intensities: 1-layer identity net (scaled 1/255
    so features land in [-0.5, 0.5]), identity adapter, default KCF params."""
    net, weights = identity_network(channels=3, scale=1.0 / 255.0,
                                    mean=(127.5, 127.5, 127.5), tap="raw")
    config = TrackerConfig(net=net, weights=weights,
                           banks=identity_banks(net.taps, net.tap_channels()),
                           **overrides)
    return config


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
