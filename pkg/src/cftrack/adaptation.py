"""Channel-reducing adaptation banks applied to backbone feature maps.

Three modes share one call site:

learned  -- parallel odd-sized "same" convolutions, one per configured scale,
            each producing K/(8*n_scales) channels; outputs concatenated in
            scale order, so the map keeps its spatial dims and ends up with
            K/8 channels.
identity -- features pass through untouched (full-channel mode).
random   -- a seeded uniform subset of K/8 channels, reproducible bit-for-bit
            from the seed.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .runtime import conv2d, read_blob, write_blob

MODES = ("learned", "identity", "random")

REDUCTION = 8  # output channels = input channels / REDUCTION


@dataclass
class ScaleFilter:
    kernel_size: int
    weights: np.ndarray  # (out, in, k, k) float32
    bias: np.ndarray     # (out,) float32


@dataclass
class AdapterBank:
    source_layer: str
    in_channels: int
    mode: str
    scales: list = field(default_factory=list)
    seed: int = None
    _selected: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"bank {self.source_layer!r}: unknown mode {self.mode!r}")
        if self.mode == "learned":
            k = self.in_channels
            if not self.scales:
                raise ConfigError(f"bank {self.source_layer!r}: learned mode needs filters")
            total = 0
            for sf in self.scales:
                if sf.kernel_size % 2 == 0:
                    raise ConfigError(
                        f"bank {self.source_layer!r}: even kernel size {sf.kernel_size}")
                out_c, in_c = sf.weights.shape[:2]
                if in_c != k:
                    raise ConfigError(
                        f"bank {self.source_layer!r}: filter expects {in_c} channels, "
                        f"source has {k}")
                if out_c * len(self.scales) * REDUCTION != k:
                    raise ConfigError(
                        f"bank {self.source_layer!r}: scale {sf.kernel_size} outputs "
                        f"{out_c} channels, expected {k // (REDUCTION * len(self.scales))}")
                total += out_c
            if total * REDUCTION != k:
                raise ConfigError(
                    f"bank {self.source_layer!r}: scale outputs sum to {total}, "
                    f"expected {k // REDUCTION}")
        elif self.mode == "random":
            if self.seed is None:
                raise ConfigError(f"bank {self.source_layer!r}: random mode needs a seed")
            self._selected = random_select_channels(
                self.in_channels, 1.0 / REDUCTION, self.seed)

    @property
    def out_channels(self):
        if self.mode == "identity":
            return self.in_channels
        return self.in_channels // REDUCTION

    @property
    def selected_channels(self):
        return self._selected


def random_select_channels(k, fraction, seed):
    """Seeded uniform sample without replacement, returned sorted.

    fraction*k must be an integer; the same seed yields the same indices on
    every platform (PCG64 stream under the hood).
    """
    count = fraction * k
    if abs(count - round(count)) > 1e-9:
        raise ConfigError(f"fraction {fraction} of {k} channels is not an integer")
    count = int(round(count))
    rng = np.random.default_rng(seed)
    picked = rng.permutation(k)[:count]
    return np.sort(picked).astype(np.int64)


def apply_adapter(features, bank):
    """Reduce a (K,H,W) feature map to (K/8,H,W) per the bank's mode.

    Spatial dims never change; identity mode returns the input untouched.
    """
    if bank.mode == "identity":
        return features
    if features.shape[0] != bank.in_channels:
        raise ConfigError(
            f"bank {bank.source_layer!r} expects {bank.in_channels} channels, "
            f"features have {features.shape[0]}")
    if bank.mode == "random":
        return np.ascontiguousarray(features[bank.selected_channels])
    outs = []
    for sf in bank.scales:
        pad = (sf.kernel_size - 1) // 2
        outs.append(conv2d(features, sf.weights, sf.bias, stride=1, pad=pad))
    return np.concatenate(outs, axis=0)


def identity_banks(taps, channels=None):
    """One identity bank per tap (full-channel pass-through)."""
    channels = channels or {}
    return {tap: AdapterBank(source_layer=tap, in_channels=channels.get(tap, 0),
                             mode="identity") for tap in taps}


def random_banks(tap_channels, seed):
    """One seeded channel-subset bank per tap; per-tap seeds derived from seed."""
    banks = {}
    for i, (tap, k) in enumerate(tap_channels.items()):
        banks[tap] = AdapterBank(source_layer=tap, in_channels=k,
                                 mode="random", seed=int(seed) + i)
    return banks


def load_adapter(path, tap_channels=None):
    """Load adapter banks (manifest + optional blob), one bank per source tap.

    When tap_channels is given (tap name -> backbone channel count), every
    bank's channel arithmetic is checked against it.
    """
    path = Path(path)
    try:
        manifest = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: cannot read adapter manifest ({exc})") from exc
    entries = manifest.get("banks")
    if not entries:
        raise DataError(f"{path}: adapter manifest has no banks")

    needs_blob = any(e.get("mode") == "learned" for e in entries)
    floats = None
    if needs_blob:
        blob_name = manifest.get("blob")
        if blob_name is None:
            raise DataError(f"{path}: learned banks present but no 'blob' entry")
        payload, crc = read_blob(path.parent / blob_name)
        declared = manifest.get("blob_sha_or_crc")
        if declared != f"crc32:{crc:08x}":
            raise DataError(f"{path}: manifest checksum does not match adapter blob")
        floats = np.frombuffer(payload, dtype="<f4")

    banks = {}
    offset = 0
    for entry in entries:
        try:
            tap = entry["source_tap"]
            k = int(entry["in_channels"])
            mode = entry["mode"]
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{path}: malformed bank entry ({exc})") from exc
        if mode == "learned":
            scales = []
            declared = entry.get("scales", [])
            if not declared:
                raise DataError(f"{path}: bank {tap!r} declares no scales")
            for sc in declared:
                size, out_c = int(sc["size"]), int(sc["out"])
                need = out_c * k * size * size + out_c
                if offset + need > floats.size:
                    raise DataError(
                        f"{path}: adapter blob ends inside bank {tap!r} scale {size}")
                w_count = need - out_c
                w = floats[offset:offset + w_count].reshape(out_c, k, size, size)
                b = floats[offset + w_count:offset + need]
                scales.append(ScaleFilter(kernel_size=size,
                                          weights=w.astype(np.float32),
                                          bias=b.astype(np.float32)))
                offset += need
            try:
                bank = AdapterBank(source_layer=tap, in_channels=k,
                                   mode="learned", scales=scales)
            except ConfigError as exc:
                raise DataError(f"{path}: {exc}") from exc
        elif mode == "random":
            seed = entry.get("seed")
            if seed is None:
                raise DataError(f"{path}: bank {tap!r} is random mode but has no seed")
            bank = AdapterBank(source_layer=tap, in_channels=k, mode="random",
                               seed=int(seed))
        elif mode == "identity":
            bank = AdapterBank(source_layer=tap, in_channels=k, mode="identity")
        else:
            raise DataError(f"{path}: bank {tap!r}: unknown mode {mode!r}")
        banks[tap] = bank
    if floats is not None and offset != floats.size:
        raise DataError(f"{path}: {floats.size - offset} unexpected floats in adapter blob")

    if tap_channels is not None:
        for tap, bank in banks.items():
            if tap not in tap_channels:
                raise DataError(f"{path}: bank {tap!r} matches no backbone tap")
            if bank.in_channels and bank.in_channels != tap_channels[tap]:
                raise DataError(
                    f"{path}: bank {tap!r} expects {bank.in_channels} channels, "
                    f"backbone tap provides {tap_channels[tap]}")
    return banks


def save_adapter(path, banks):
    """Write banks as an adapter manifest (+ blob when any bank is learned)."""
    path = Path(path)
    entries = []
    arrays = []
    for tap, bank in banks.items():
        entry = {"source_tap": tap, "in_channels": bank.in_channels, "mode": bank.mode}
        if bank.mode == "learned":
            entry["scales"] = [
                {"size": sf.kernel_size, "out": int(sf.weights.shape[0])}
                for sf in bank.scales]
            for sf in bank.scales:
                arrays.extend([sf.weights, sf.bias])
        elif bank.mode == "random":
            entry["seed"] = int(bank.seed)
        entries.append(entry)
    manifest = {"version": 1, "banks": entries}
    if arrays:
        blob_path = path.with_suffix(".bin")
        crc = write_blob(blob_path, arrays)
        manifest["blob"] = blob_path.name
        manifest["blob_sha_or_crc"] = f"crc32:{crc:08x}"
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return path
