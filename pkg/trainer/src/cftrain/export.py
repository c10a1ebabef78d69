"""Bit-exact export of backbone and adapter weights into the runtime's
manifest+blob files, plus the round-trip parity check against the runtime.

The runtime consumes BGR pixels minus a per-channel mean, nothing else.
Torchvision-layout checkpoints expect RGB in [0,1] normalized by the
ImageNet mean/std, so for those the exporter folds the 1/(255*std) scaling
into conv1_1 and permutes its input channels to BGR; the manifest mean
becomes 255*mean in BGR order. Exported files then reproduce the training
framework's activations on the same picture.
"""

import json
import struct
import zlib
from pathlib import Path

import numpy as np
import torch

from cftrack.runtime import forward_extract, load_network

from .model import (CAFFE_MEAN_BGR, TAP_INDICES, TORCHVISION_MEAN_RGB,
                    TORCHVISION_STD_RGB, backbone_prefix, extract_tap)

_TAP_FOR_INDEX = {v: k for k, v in TAP_INDICES.items()}


def _blob_bytes(arrays):
    payload = b"".join(np.ascontiguousarray(a, dtype="<f4").tobytes() for a in arrays)
    crc = zlib.crc32(payload) & 0xFFFFFFFF
    return payload + struct.pack("<QI", len(payload), crc), crc


def _write_pair(manifest_path, manifest, arrays):
    manifest_path = Path(manifest_path)
    blob_path = manifest_path.with_suffix(".bin")
    blob, crc = _blob_bytes(arrays)
    blob_path.write_bytes(blob)
    manifest["blob"] = blob_path.name
    manifest["blob_sha_or_crc"] = f"crc32:{crc:08x}"
    manifest_path.write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return manifest_path, blob_path


def _layer_entries(prefix):
    """Manifest rows for the torch prefix, naming convs convB_I / relus
    reluB_I / pools poolB with VGG block numbering."""
    entries = []
    block, idx = 1, 1
    channels = 3
    for module in prefix:
        if isinstance(module, torch.nn.Conv2d):
            entries.append({"name": f"conv{block}_{idx}", "kind": "conv",
                            "kh": module.kernel_size[0], "kw": module.kernel_size[1],
                            "in": module.in_channels, "out": module.out_channels,
                            "stride": module.stride[0], "pad": module.padding[0]})
            channels = module.out_channels
        elif isinstance(module, torch.nn.ReLU):
            entries.append({"name": f"relu{block}_{idx}", "kind": "relu",
                            "kh": 1, "kw": 1, "in": channels, "out": channels,
                            "stride": 1, "pad": 0})
            idx += 1
        elif isinstance(module, torch.nn.MaxPool2d):
            entries.append({"name": f"pool{block}", "kind": "maxpool",
                            "kh": module.kernel_size, "kw": module.kernel_size,
                            "in": channels, "out": channels,
                            "stride": module.stride, "pad": 0})
            block += 1
            idx = 1
        else:
            raise TypeError(f"unexpected backbone module {type(module).__name__}")
    return entries


def export_backbone(src, out_path, taps=("relu3_4", "relu4_4", "relu5_4")):
    """Export the VGG-19 conv prefix as the runtime's manifest + blob.

    src as in backbone_prefix(); returns (manifest_path, blob_path).
    """
    prefix, pretrained_layout = backbone_prefix(src)
    entries = _layer_entries(prefix)
    arrays = []
    first_conv = True
    for module in prefix:
        if not isinstance(module, torch.nn.Conv2d):
            continue
        w = module.weight.detach().numpy().astype(np.float32)
        b = module.bias.detach().numpy().astype(np.float32)
        if first_conv and pretrained_layout:
            # fold RGB [0,1] + std normalization into the first conv and
            # flip its input channels so the runtime can feed raw BGR - mean
            std = np.array(TORCHVISION_STD_RGB, dtype=np.float32)
            w = w / (255.0 * std)[None, :, None, None]
            w = w[:, ::-1]
        first_conv = False
        arrays.extend([np.ascontiguousarray(w), b])
    if pretrained_layout:
        mean = [255.0 * m for m in reversed(TORCHVISION_MEAN_RGB)]
    else:
        mean = list(CAFFE_MEAN_BGR)
    manifest = {"version": 1,
                "layers": entries,
                "taps": list(taps),
                "input_mean": mean}
    return _write_pair(out_path, manifest, arrays)


def export_adapter(out_path, branches=None, identity_taps=None, random_taps=None):
    """Export adapter banks: learned branches and/or degenerate descriptors.

    branches: {tap: AdaptBranch}; identity_taps: {tap: channels};
    random_taps: {tap: (channels, seed)}. Heads are never written.
    """
    entries = []
    arrays = []
    for tap, branch in (branches or {}).items():
        adapt = getattr(branch, "adapt", branch)
        scales = []
        for size, conv in zip(adapt.scales, adapt.convs):
            w = conv.weight.detach().numpy().astype(np.float32)
            b = conv.bias.detach().numpy().astype(np.float32)
            scales.append({"size": int(size), "out": int(w.shape[0])})
            arrays.extend([np.ascontiguousarray(w), b])
        entries.append({"source_tap": tap, "in_channels": int(adapt.convs[0].in_channels),
                        "mode": "learned", "scales": scales})
    for tap, channels in (identity_taps or {}).items():
        entries.append({"source_tap": tap, "in_channels": int(channels),
                        "mode": "identity"})
    for tap, (channels, seed) in (random_taps or {}).items():
        entries.append({"source_tap": tap, "in_channels": int(channels),
                        "mode": "random", "seed": int(seed)})
    if not entries:
        raise ValueError("nothing to export")
    manifest = {"version": 1, "banks": entries}
    out_path = Path(out_path)
    if arrays:
        return _write_pair(out_path, manifest, arrays)[0]
    out_path.write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return out_path


def runtime_probe_input(probe_bgr, mean):
    """The runtime-side network input for a BGR uint8-scale probe image."""
    x = probe_bgr.astype(np.float32) - np.asarray(mean, dtype=np.float32)
    return np.ascontiguousarray(x.transpose(2, 0, 1))


def torch_probe_input(probe_bgr, pretrained_layout):
    """The torch-side tensor equivalent to the runtime preprocessing."""
    if pretrained_layout:
        rgb = probe_bgr[:, :, ::-1].astype(np.float32) / 255.0
        rgb = (rgb - np.array(TORCHVISION_MEAN_RGB, np.float32)) \
            / np.array(TORCHVISION_STD_RGB, np.float32)
        return torch.from_numpy(np.ascontiguousarray(rgb.transpose(2, 0, 1)))[None]
    x = probe_bgr.astype(np.float32) - np.asarray(CAFFE_MEAN_BGR, dtype=np.float32)
    return torch.from_numpy(np.ascontiguousarray(x.transpose(2, 0, 1)))[None]


def verify_backbone_export(manifest_path, src, probe_bgr):
    """Max activation gap per tap between the runtime (loading the exported
    files) and the torch prefix, on one probe image."""
    prefix, pretrained_layout = backbone_prefix(src)
    net, weights = load_network(manifest_path)
    runtime_out = forward_extract(net, weights,
                                  runtime_probe_input(probe_bgr, net.input_mean))
    torch_in = torch_probe_input(probe_bgr, pretrained_layout)
    gaps = {}
    for tap in net.taps:
        ref = extract_tap(prefix, torch_in, tap)[0].numpy()
        gaps[tap] = float(np.abs(runtime_out[tap] - ref).max())
    return gaps
