"""Tracking orchestration: window geometry, the lazy feed-forward feature
cache, per-layer detection, weighted-voting fusion, and model updates.

Per frame the tracker runs at most two network forwards: one to predict
(the cache never survives a frame boundary, features belong to one image)
and one to update -- and the second is skipped whenever the newly predicted
KCF window still lies inside the input window of the first, which is
(1 + margin) times larger by construction.

Geometry bookkeeping: the input window of side W is resized to the fixed
network input side S, so a backbone tap with cumulative stride s has cells
stride_px = s*W/S image pixels apart, with cell (0,0) anchored at the
window's top-left corner. Pixel -> cell offsets round half away from zero.
"""

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .adaptation import apply_adapter
from .errors import ConfigError, DataError
from .kcf import KcfParams, detect, hann_window, train_model, update_model
from .runtime import bilinear_resize, forward_extract

# relative response spread below this is float noise: treat as flat, no move
FLAT_EPS = 1e-5


@dataclass
class Rect:
    x: float
    y: float
    w: float
    h: float

    @property
    def center(self):
        return (self.x + self.w / 2.0, self.y + self.h / 2.0)

    @classmethod
    def from_center(cls, cx, cy, w, h):
        return cls(cx - w / 2.0, cy - h / 2.0, w, h)


@dataclass(frozen=True)
class WindowGeometry:
    center_x: float
    center_y: float
    side_w: float
    side_h: float

    @property
    def left(self):
        return self.center_x - self.side_w / 2.0

    @property
    def right(self):
        return self.center_x + self.side_w / 2.0

    @property
    def top(self):
        return self.center_y - self.side_h / 2.0

    @property
    def bottom(self):
        return self.center_y + self.side_h / 2.0


def window_contains(outer, inner):
    """True iff all four edges of inner lie within outer (image pixels)."""
    return (inner.left >= outer.left and inner.right <= outer.right
            and inner.top >= outer.top and inner.bottom <= outer.bottom)


def round_half_away(v):
    """Round to nearest integer, ties away from zero (cache-crop alignment)."""
    return math.floor(v + 0.5) if v >= 0 else math.ceil(v - 0.5)


def cell_offset(delta_px, stride_px):
    """Pixel displacement -> feature-map cell offset."""
    return round_half_away(delta_px / stride_px)


@dataclass
class CacheEntry:
    adapted: np.ndarray  # post-adaptation feature map (C,h,w)
    stride_x: float      # image px per cell
    stride_y: float
    origin_x: float      # image px of cell (0,0)
    origin_y: float


@dataclass
class FeatureCache:
    input_window: WindowGeometry = None
    entries: dict = field(default_factory=dict)
    valid: bool = False


@dataclass
class TrackerConfig:
    rho: float = 2.5
    margin: float = 0.10
    input_side: int = 224
    fusion_weights: list = None   # per tap, in tap order; None = defaults
    update_interval: int = 1
    adapter: str = "identity"     # file path | "identity" | "random:SEED"
    kcf: KcfParams = field(default_factory=KcfParams)
    # runtime objects, attached by the caller after loading files
    net: object = None
    weights: dict = None
    banks: dict = None

    @classmethod
    def from_file(cls, path):
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"{path}: cannot read tracker config ({exc})") from exc
        kcf_raw = dict(raw.pop("kcf", {}))
        if "lambda" in kcf_raw:
            kcf_raw["lambda_value"] = kcf_raw.pop("lambda")
        cfg = cls(kcf=KcfParams(**kcf_raw))
        for key, value in raw.items():
            if not hasattr(cfg, key) or key in ("net", "weights", "banks"):
                raise DataError(f"{path}: unknown config key {key!r}")
            setattr(cfg, key, value)
        return cfg

    def validate(self):
        if self.rho <= 1.0:
            raise ConfigError("rho must be > 1")
        if self.margin < 0.0:
            raise ConfigError("margin must be >= 0")
        if self.input_side < 8:
            raise ConfigError("input_side too small")
        if self.update_interval < 1:
            raise ConfigError("update_interval must be >= 1")


@dataclass
class TrackState:
    config: TrackerConfig
    target_w: float
    target_h: float
    center: tuple           # (cx, cy), image px
    kcf_w: float            # fixed KCF window sides
    kcf_h: float
    taps: list
    models: dict = field(default_factory=dict)       # tap -> KcfModel
    fusion_weights: list = None
    cache: FeatureCache = field(default_factory=FeatureCache)
    crop_dims: dict = field(default_factory=dict)    # tap -> (cells_h, cells_w)
    grid: tuple = None                               # common response grid (h, w)
    hann: np.ndarray = None
    frames: int = 0
    forward_passes: int = 0
    single_pass_frames: int = 0   # frames after init that ran exactly one forward

    @property
    def target(self):
        return Rect.from_center(self.center[0], self.center[1],
                                self.target_w, self.target_h)


def compute_windows(target, rho, margin):
    """(KCF window, input window): rho-scaled target, then margin-grown copy."""
    cx, cy = target.center
    kcf = WindowGeometry(cx, cy, rho * target.w, rho * target.h)
    grown = WindowGeometry(cx, cy, (1.0 + margin) * kcf.side_w,
                           (1.0 + margin) * kcf.side_h)
    return kcf, grown


def crop_patch(image, window, out_side, mean):
    """Crop a window (replicate padding outside the image) and resample it to
    out_side x out_side, returning a mean-subtracted (3,S,S) float32 map.

    Samples at src = left + (j + 0.5)*side/out - 0.5 per axis, so an
    integer-aligned window of exactly out_side pixels is copied verbatim.
    """
    if image.ndim != 3 or image.shape[2] != 3:
        raise ConfigError(f"expected an (H,W,3) image, got shape {image.shape}")
    h, w = image.shape[:2]
    sx = window.left + (np.arange(out_side) + 0.5) * (window.side_w / out_side) - 0.5
    sy = window.top + (np.arange(out_side) + 0.5) * (window.side_h / out_side) - 0.5
    x0 = np.floor(sx).astype(np.int64)
    y0 = np.floor(sy).astype(np.int64)
    fx = (sx - x0).astype(np.float32)[None, :]
    fy = (sy - y0).astype(np.float32)[:, None]
    x0c = np.clip(x0, 0, w - 1)
    x1c = np.clip(x0 + 1, 0, w - 1)
    y0c = np.clip(y0, 0, h - 1)
    y1c = np.clip(y0 + 1, 0, h - 1)
    img = image.astype(np.float32, copy=False)
    top = img[y0c][:, x0c] * (1 - fx)[..., None] + img[y0c][:, x1c] * fx[..., None]
    bot = img[y1c][:, x0c] * (1 - fx)[..., None] + img[y1c][:, x1c] * fx[..., None]
    patch = top * (1 - fy)[..., None] + bot * fy[..., None]
    patch -= np.asarray(mean, dtype=np.float32)
    return np.ascontiguousarray(patch.transpose(2, 0, 1))


def fuse_responses(maps, weights):
    """Elementwise weighted sum of per-tap response maps."""
    if len(maps) != len(weights):
        raise ConfigError("one weight per response map required")
    shape = maps[0].shape
    for m in maps:
        if m.shape != shape:
            raise ConfigError(f"response map shapes differ: {m.shape} vs {shape}")
    fused = np.zeros(shape, dtype=np.float32)
    for m, w in zip(maps, weights):
        fused += np.float32(w) * m
    return fused


def _default_weights(taps):
    # deepest tap dominates; (0.02, 0.5, 1.0) in tap order for 3-tap backbones
    if len(taps) == 3:
        return [0.02, 0.5, 1.0]
    return [1.0] * len(taps)


def _rebuild_cache(state, image, needed):
    cfg = state.config
    input_window = WindowGeometry(needed.center_x, needed.center_y,
                                  (1.0 + cfg.margin) * needed.side_w,
                                  (1.0 + cfg.margin) * needed.side_h)
    patch = crop_patch(image, input_window, cfg.input_side, cfg.net.input_mean)
    feats = forward_extract(cfg.net, cfg.weights, patch, state.taps)
    pitches = cfg.net.tap_strides()
    entries = {}
    for tap in state.taps:
        adapted = apply_adapter(feats[tap], cfg.banks[tap])
        entries[tap] = CacheEntry(
            adapted=adapted,
            stride_x=pitches[tap] * input_window.side_w / cfg.input_side,
            stride_y=pitches[tap] * input_window.side_h / cfg.input_side,
            origin_x=input_window.left,
            origin_y=input_window.top)
    state.cache = FeatureCache(input_window=input_window, entries=entries, valid=True)
    state.forward_passes += 1


def _crop_cached(state, needed):
    crops = {}
    for tap, entry in state.cache.entries.items():
        map_h, map_w = entry.adapted.shape[1:]
        if tap not in state.crop_dims:
            ch = min(map_h, round_half_away(needed.side_h / entry.stride_y))
            cw = min(map_w, round_half_away(needed.side_w / entry.stride_x))
            state.crop_dims[tap] = (max(ch, 1), max(cw, 1))
        ch, cw = state.crop_dims[tap]
        oy = cell_offset(needed.top - entry.origin_y, entry.stride_y)
        ox = cell_offset(needed.left - entry.origin_x, entry.stride_x)
        oy = min(max(oy, 0), map_h - ch)
        ox = min(max(ox, 0), map_w - cw)
        crops[tap] = entry.adapted[:, oy:oy + ch, ox:ox + cw]
    return crops


def fetch_features(state, image, needed_window):
    """Per-tap adapted feature crops for a KCF-sized window.

    Cache hit (no forward pass) iff the cache is valid and all four edges of
    the needed window lie inside the cached input window; any miss rebuilds
    the cache around the needed window and counts one forward pass.
    """
    if not (state.cache.valid and window_contains(state.cache.input_window,
                                                  needed_window)):
        _rebuild_cache(state, image, needed_window)
    return _crop_cached(state, needed_window)


def _grid_features(state, crops):
    """Resample per-tap crops to the common grid and apply the window."""
    gh, gw = state.grid
    out = {}
    for tap, crop in crops.items():
        if crop.shape[1:] != (gh, gw):
            crop = bilinear_resize(crop, gh, gw)
        out[tap] = crop * state.hann[None, :, :]
    return out


def init_tracker(image, init_rect, config):
    """Initialize tracking from the first ground-truth rectangle.

    Runs one forward pass, trains one correlation filter per tap on the
    common response grid, and freezes the target/window sizes for the run.
    """
    config.validate()
    if config.net is None or config.weights is None or config.banks is None:
        raise ConfigError("config must carry loaded net, weights, and adapter banks")
    if init_rect.w < 4 or init_rect.h < 4:
        raise ConfigError(f"init rect {init_rect.w}x{init_rect.h} is degenerate (< 4 px)")
    h, w = image.shape[:2]
    x = min(max(init_rect.x, 0.0), max(w - init_rect.w, 0.0))
    y = min(max(init_rect.y, 0.0), max(h - init_rect.h, 0.0))
    rect = Rect(x, y, init_rect.w, init_rect.h)

    taps = list(config.net.taps)
    for tap in taps:
        if tap not in config.banks:
            raise ConfigError(f"no adapter bank for tap {tap!r}")
    kcf_window, _ = compute_windows(rect, config.rho, config.margin)
    weights_per_tap = (list(config.fusion_weights) if config.fusion_weights
                       else _default_weights(taps))
    if len(weights_per_tap) != len(taps):
        raise ConfigError("fusion_weights length must match the tap count")

    state = TrackState(config=config, target_w=rect.w, target_h=rect.h,
                       center=rect.center, kcf_w=kcf_window.side_w,
                       kcf_h=kcf_window.side_h, taps=taps,
                       fusion_weights=weights_per_tap)
    crops = fetch_features(state, image, kcf_window)

    pitches = config.net.tap_strides()
    finest = min(taps, key=lambda t: pitches[t])
    state.grid = state.crop_dims[finest]
    state.hann = hann_window(*state.grid)
    for tap, feat in _grid_features(state, crops).items():
        state.models[tap] = train_model(feat, config.kcf)
    state.frames = 1
    return state


def track_frame(state, image):
    """One tracking step; returns the predicted rect (fixed size).

    Workflow: predict at the previous center (fresh forward; cached features
    belong to the previous image), fuse per-tap responses, shift the center by
    the fused peak, then fetch features at the new window -- a cache hit when
    it stayed inside the prediction's input window -- and update the models.
    """
    if state.frames < 1:
        raise ConfigError("tracker is not initialized")
    state.cache.valid = False  # new image, cached features are stale
    passes_before = state.forward_passes

    cx, cy = state.center
    window = WindowGeometry(cx, cy, state.kcf_w, state.kcf_h)
    crops = fetch_features(state, image, window)
    feats = _grid_features(state, crops)
    responses = [detect(state.models[tap], feats[tap]) for tap in state.taps]
    fused = fuse_responses(responses, state.fusion_weights)

    gh, gw = fused.shape
    hi, lo = float(fused.max()), float(fused.min())
    if hi - lo <= FLAT_EPS * max(1.0, abs(hi), abs(lo)):
        dr = dc = 0
    else:
        peak = int(np.argmax(fused))
        dr = peak // gw - gh // 2
        dc = peak % gw - gw // 2
    new_cx = cx + dc * (state.kcf_w / gw)
    new_cy = cy + dr * (state.kcf_h / gh)
    state.center = (new_cx, new_cy)

    if state.frames % state.config.update_interval == 0:
        new_window = WindowGeometry(new_cx, new_cy, state.kcf_w, state.kcf_h)
        new_crops = fetch_features(state, image, new_window)
        new_feats = _grid_features(state, new_crops)
        for tap in state.taps:
            update_model(state.models[tap], new_feats[tap], state.config.kcf.eta)

    state.frames += 1
    if state.forward_passes - passes_before == 1:
        state.single_pass_frames += 1
    return state.target
