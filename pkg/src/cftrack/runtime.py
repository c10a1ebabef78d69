"""Forward-only convolutional runtime.

Feature maps are plain float32 numpy arrays, channel-major, shape
(channels, height, width). Spectra keep the same layout as complex arrays;
scipy.fft preserves single precision, so float32 maps transform to complex64.

Networks are described by a JSON manifest plus a raw little-endian float32
weight blob; both are validated (sizes, channel chain, CRC32) before any
weight is handed out.
"""

import json
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.fft
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, DataError

LAYER_KINDS = ("conv", "relu", "maxpool")

MANIFEST_VERSION = 1


def conv2d(x, weights, bias, stride=1, pad=0):
    """2-D convolution of a (C,H,W) map with an (O,C,kh,kw) weight block.

    Zero padding outside bounds; output spatial dims follow
    floor((in + 2*pad - kernel)/stride) + 1. Implemented as im2col plus a
    single sgemm so results do not depend on any internal loop order.
    """
    if x.ndim != 3:
        raise ConfigError(f"conv2d expects a (C,H,W) map, got shape {x.shape}")
    out_c, in_c, kh, kw = weights.shape
    if x.shape[0] != in_c:
        raise ConfigError(
            f"conv2d channel mismatch: input has {x.shape[0]}, weights expect {in_c}")
    if stride < 1:
        raise ConfigError("conv2d stride must be >= 1")
    if bias.shape != (out_c,):
        raise ConfigError(f"conv2d bias length {bias.shape} != out channels {out_c}")
    if pad:
        x = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    if x.shape[1] < kh or x.shape[2] < kw:
        raise ConfigError(
            f"conv2d input {x.shape[1]}x{x.shape[2]} smaller than kernel {kh}x{kw}")
    win = sliding_window_view(x, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    oh, ow = win.shape[1], win.shape[2]
    cols = win.transpose(1, 2, 0, 3, 4).reshape(oh * ow, in_c * kh * kw)
    out = cols @ weights.reshape(out_c, -1).T.astype(cols.dtype) + bias
    return np.ascontiguousarray(out.T.reshape(out_c, oh, ow), dtype=np.float32)


def relu(x):
    """Elementwise max(0, x), shape preserved."""
    return np.maximum(x, 0)


def max_pool2d(x, kernel, stride):
    """Per-channel window maximum; dims = floor((in - kernel)/stride) + 1."""
    if kernel < 1 or stride < 1:
        raise ConfigError("max_pool2d kernel and stride must be >= 1")
    if x.shape[1] < kernel or x.shape[2] < kernel:
        raise ConfigError(
            f"max_pool2d input {x.shape[1]}x{x.shape[2]} smaller than kernel {kernel}")
    win = sliding_window_view(x, (kernel, kernel), axis=(1, 2))[:, ::stride, ::stride]
    return np.ascontiguousarray(win.max(axis=(3, 4)))


def bilinear_resize(x, out_h, out_w):
    """Per-channel bilinear interpolation with corner-aligned sampling.

    Sample i of the output maps to source coordinate i*(in-1)/(out-1)
    (0 when the output axis has a single sample), so the four corners are
    reproduced exactly and resizing to identical dims is the identity.
    """
    if out_h < 1 or out_w < 1:
        raise ConfigError("bilinear_resize output dims must be >= 1")
    c, h, w = x.shape
    ys = np.zeros(out_h) if out_h == 1 else np.arange(out_h) * ((h - 1) / (out_h - 1))
    xs = np.zeros(out_w) if out_w == 1 else np.arange(out_w) * ((w - 1) / (out_w - 1))
    y0 = np.minimum(ys.astype(np.int64), h - 1)
    x0 = np.minimum(xs.astype(np.int64), w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0).astype(np.float32)[None, :, None]
    fx = (xs - x0).astype(np.float32)[None, None, :]
    rows0 = x[:, y0, :]
    rows1 = x[:, y1, :]
    top = rows0[:, :, x0] * (1 - fx) + rows0[:, :, x1] * fx
    bot = rows1[:, :, x0] * (1 - fx) + rows1[:, :, x1] * fx
    return np.ascontiguousarray(top * (1 - fy) + bot * fy, dtype=np.float32)


def fft2(x):
    """Unnormalized forward 2-D FFT over the trailing (H,W) axes."""
    return scipy.fft.fft2(x, axes=(-2, -1))


def ifft2(spec):
    """1/(H*W)-normalized inverse 2-D FFT; returns the real part.

    Inputs are spectra of real signals, so the imaginary residue is
    float noise and is discarded.
    """
    return scipy.fft.ifft2(spec, axes=(-2, -1)).real


@dataclass(frozen=True)
class LayerSpec:
    name: str
    kind: str
    kernel_h: int = 0
    kernel_w: int = 0
    in_channels: int = 0
    out_channels: int = 0
    stride: int = 1
    pad: int = 0


@dataclass(frozen=True)
class NetworkSpec:
    layers: tuple
    taps: tuple
    input_mean: tuple

    def layer(self, name):
        for spec in self.layers:
            if spec.name == name:
                return spec
        raise ConfigError(f"no layer named {name!r}")

    def tap_strides(self):
        """Cumulative spatial stride (input px per cell) at each tap."""
        strides = {}
        acc = 1
        for spec in self.layers:
            acc *= spec.stride
            if spec.name in self.taps:
                strides[spec.name] = acc
        return strides

    def tap_channels(self):
        """Channel count exported at each tap."""
        chans = {}
        cur = None
        for spec in self.layers:
            if spec.kind == "conv":
                cur = spec.out_channels
            if spec.name in self.taps:
                chans[spec.name] = cur
        return chans


def _validate_network(layers, taps):
    cur = None
    for spec in layers:
        if spec.kind not in LAYER_KINDS:
            raise DataError(f"layer {spec.name!r}: unknown layer kind {spec.kind!r}")
        if spec.kind == "conv":
            if spec.out_channels < 1 or spec.in_channels < 1:
                raise DataError(f"layer {spec.name!r}: bad channel counts")
            if cur is not None and spec.in_channels != cur:
                raise DataError(
                    f"layer {spec.name!r}: expects {spec.in_channels} input channels "
                    f"but the previous layer produces {cur}")
            if spec.kernel_h < 1 or spec.kernel_w < 1:
                raise DataError(f"layer {spec.name!r}: bad kernel size")
            cur = spec.out_channels
        if spec.stride < 1 or spec.pad < 0:
            raise DataError(f"layer {spec.name!r}: bad stride/pad")
    names = [spec.name for spec in layers]
    if len(set(names)) != len(names):
        raise DataError("duplicate layer names in manifest")
    for tap in taps:
        if tap not in names:
            raise DataError(f"tap {tap!r} names no layer")


def _conv_block_floats(spec):
    return (spec.out_channels * spec.in_channels * spec.kernel_h * spec.kernel_w
            + spec.out_channels)


def write_blob(path, arrays):
    """Concatenate float32 arrays into a blob with a trailing length + CRC32."""
    payload = b"".join(np.ascontiguousarray(a, dtype="<f4").tobytes() for a in arrays)
    crc = zlib.crc32(payload) & 0xFFFFFFFF
    with open(path, "wb") as fh:
        fh.write(payload)
        fh.write(struct.pack("<QI", len(payload), crc))
    return crc


def read_blob(path):
    """Return (payload bytes, crc) after verifying the trailing length + CRC32."""
    raw = Path(path).read_bytes()
    if len(raw) < 12:
        raise DataError(f"{path}: blob too short for its trailer")
    payload, trailer = raw[:-12], raw[-12:]
    length, crc = struct.unpack("<QI", trailer)
    if length != len(payload):
        raise DataError(
            f"{path}: trailer declares {length} payload bytes, file holds {len(payload)}")
    if zlib.crc32(payload) & 0xFFFFFFFF != crc:
        raise DataError(f"{path}: blob CRC32 mismatch")
    return payload, crc


def _check_manifest_crc(manifest, crc, path):
    declared = manifest.get("blob_sha_or_crc")
    if declared != f"crc32:{crc:08x}":
        raise DataError(
            f"{path}: manifest checksum {declared!r} does not match blob crc32:{crc:08x}")


def _blob_path_for(manifest_path, manifest, blob_path):
    if blob_path is not None:
        return Path(blob_path)
    name = manifest.get("blob")
    if name is None:
        raise DataError(f"{manifest_path}: manifest has no 'blob' entry")
    return Path(manifest_path).parent / name


def load_network(manifest_path, blob_path=None):
    """Load and validate a (NetworkSpec, weights) pair from manifest + blob.

    The weight store is a dict name -> (weights[out][in][kh][kw], bias[out]),
    both float32, immutable by convention after load. Every size is checked
    against the manifest before anything is returned.
    """
    try:
        manifest = json.loads(Path(manifest_path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"{manifest_path}: cannot read manifest ({exc})") from exc
    try:
        layers = tuple(
            LayerSpec(
                name=entry["name"], kind=entry["kind"],
                kernel_h=int(entry.get("kh", 0)), kernel_w=int(entry.get("kw", 0)),
                in_channels=int(entry.get("in", 0)), out_channels=int(entry.get("out", 0)),
                stride=int(entry.get("stride", 1)), pad=int(entry.get("pad", 0)))
            for entry in manifest["layers"])
        taps = tuple(manifest["taps"])
        input_mean = tuple(float(v) for v in manifest["input_mean"])
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{manifest_path}: malformed manifest ({exc})") from exc
    if len(input_mean) != 3:
        raise DataError(f"{manifest_path}: input_mean must have 3 entries")
    _validate_network(layers, taps)
    net = NetworkSpec(layers=layers, taps=taps, input_mean=input_mean)

    blob_file = _blob_path_for(manifest_path, manifest, blob_path)
    payload, crc = read_blob(blob_file)
    _check_manifest_crc(manifest, crc, manifest_path)

    floats = np.frombuffer(payload, dtype="<f4")
    store = {}
    offset = 0
    for spec in layers:
        if spec.kind != "conv":
            continue
        need = _conv_block_floats(spec)
        if offset + need > floats.size:
            raise DataError(
                f"{blob_file}: weight blob ends inside layer {spec.name!r} "
                f"(needs {need} floats at offset {offset}, {floats.size - offset} left)")
        w_count = need - spec.out_channels
        w = floats[offset:offset + w_count].reshape(
            spec.out_channels, spec.in_channels, spec.kernel_h, spec.kernel_w)
        b = floats[offset + w_count:offset + need]
        store[spec.name] = (w.astype(np.float32), b.astype(np.float32))
        offset += need
    if offset != floats.size:
        raise DataError(
            f"{blob_file}: {floats.size - offset} unexpected trailing floats in blob")
    return net, store


def save_network(manifest_path, net, weights, blob_path=None):
    """Write the manifest + blob pair that load_network reads back bit-exactly."""
    manifest_path = Path(manifest_path)
    if blob_path is None:
        blob_path = manifest_path.with_suffix(".bin")
    arrays = []
    for spec in net.layers:
        if spec.kind != "conv":
            continue
        w, b = weights[spec.name]
        expect = (spec.out_channels, spec.in_channels, spec.kernel_h, spec.kernel_w)
        if tuple(w.shape) != expect or b.shape != (spec.out_channels,):
            raise ConfigError(f"layer {spec.name!r}: weight shapes do not match its spec")
        arrays.extend([w, b])
    crc = write_blob(blob_path, arrays)
    manifest = {
        "version": MANIFEST_VERSION,
        "layers": [
            {"name": s.name, "kind": s.kind, "kh": s.kernel_h, "kw": s.kernel_w,
             "in": s.in_channels, "out": s.out_channels, "stride": s.stride, "pad": s.pad}
            for s in net.layers],
        "taps": list(net.taps),
        "input_mean": list(net.input_mean),
        "blob": blob_path.name,
        "blob_sha_or_crc": f"crc32:{crc:08x}",
    }
    manifest_path.write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return manifest_path, blob_path


def identity_network(channels=3, scale=1.0, mean=(0.0, 0.0, 0.0), tap="raw"):
    """1x1 diagonal conv net passing (scaled) input pixels straight through.

    Used to run the tracker on raw intensities without a learned backbone.
    """
    spec = LayerSpec(name=tap, kind="conv", kernel_h=1, kernel_w=1,
                     in_channels=channels, out_channels=channels, stride=1, pad=0)
    net = NetworkSpec(layers=(spec,), taps=(tap,), input_mean=tuple(mean))
    w = np.zeros((channels, channels, 1, 1), dtype=np.float32)
    for i in range(channels):
        w[i, i, 0, 0] = scale
    weights = {tap: (w, np.zeros(channels, dtype=np.float32))}
    return net, weights


def forward_extract(net, weights, x, taps=None):
    """Run one forward pass and return {tap name: activation} for each tap.

    Pure function of (net, weights, x); stops as soon as every requested
    tap has been collected.
    """
    wanted = tuple(taps) if taps is not None else net.taps
    for tap in wanted:
        if tap not in net.taps:
            raise ConfigError(f"tap {tap!r} is not exported by this network")
    first_conv = next((s for s in net.layers if s.kind == "conv"), None)
    if first_conv is not None and x.shape[0] != first_conv.in_channels:
        raise ConfigError(
            f"input has {x.shape[0]} channels, network expects {first_conv.in_channels}")
    out = {}
    cur = np.asarray(x, dtype=np.float32)
    remaining = set(wanted)
    for spec in net.layers:
        if not remaining:
            break
        try:
            if spec.kind == "conv":
                w, b = weights[spec.name]
                cur = conv2d(cur, w, b, stride=spec.stride, pad=spec.pad)
            elif spec.kind == "relu":
                cur = relu(cur)
            else:
                cur = max_pool2d(cur, spec.kernel_h, spec.stride)
        except KeyError as exc:
            raise ConfigError(f"layer {spec.name!r}: no weights loaded") from exc
        except ConfigError as exc:
            raise ConfigError(f"layer {spec.name!r}: {exc}") from exc
        if spec.name in remaining:
            out[spec.name] = cur
            remaining.discard(spec.name)
    if remaining:
        raise ConfigError(f"taps never reached: {sorted(remaining)}")
    return out
