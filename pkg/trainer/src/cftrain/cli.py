"""Trainer command line: train a tracking branch, export backbone/adapter
weights in the runtime's file format."""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .data import load_dataset
from .export import export_adapter, export_backbone, verify_backbone_export
from .model import TAP_CHANNELS
from .train import Hyperparams, train_branch


def _cmd_train(args):
    samples = load_dataset(args.data)
    hyper = Hyperparams(steps=args.steps, lr=args.lr, alpha=args.alpha,
                        box_side=args.box_side, image_side=args.image_side,
                        seed=args.seed)
    branch, log = train_branch(args.tap, samples, backbone_src=args.backbone,
                               hyper=hyper)
    out = Path(args.out)
    existing = {}
    if out.exists():  # merge into an existing multi-tap adapter file
        manifest = json.loads(out.read_text())
        for entry in manifest.get("banks", []):
            if entry["source_tap"] != args.tap and entry["mode"] == "identity":
                existing[entry["source_tap"]] = entry["in_channels"]
    export_adapter(out, branches={args.tap: branch}, identity_taps=existing)
    print(f"{args.tap}: loss {log.first:.4f} -> {log.last:.4f} "
          f"over {len(log.losses)} steps; adapter written to {out}")
    return 0


def _cmd_export_backbone(args):
    manifest, blob = export_backbone(args.src, args.out)
    print(f"backbone exported: {manifest} + {blob}")
    if args.probe_check:
        rng = np.random.default_rng(0)
        probe = rng.integers(0, 255, size=(224, 224, 3)).astype(np.uint8)
        gaps = verify_backbone_export(manifest, args.src, probe)
        for tap, gap in gaps.items():
            print(f"  parity {tap}: max |delta| = {gap:.2e}")
        if max(gaps.values()) > 1e-3:
            print("  parity check FAILED (> 1e-3)", file=sys.stderr)
            return 3
    return 0


def _cmd_export_adapter(args):
    taps = {tap: TAP_CHANNELS[tap] for tap in args.taps}
    if args.mode == "identity":
        path = export_adapter(args.out, identity_taps=taps)
    elif args.mode == "random":
        path = export_adapter(args.out, random_taps={
            tap: (ch, args.seed + i) for i, (tap, ch) in enumerate(taps.items())})
    else:
        import torch
        from .model import TrackingBranch
        torch.manual_seed(args.seed)
        branches = {tap: TrackingBranch(tap) for tap in taps}
        path = export_adapter(args.out, branches=branches)
    print(f"adapter ({args.mode}) written to {path}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="cftrain", description="Train and export tracking adaptation layers")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train one tracking branch")
    p_train.add_argument("--tap", required=True,
                         choices=("relu3_4", "relu4_4", "relu5_4"))
    p_train.add_argument("--data", required=True, help="annotated image directory")
    p_train.add_argument("--out", required=True, help="adapter file to write")
    p_train.add_argument("--backbone", default="random:0",
                         help="random:SEED or torch state-dict path")
    p_train.add_argument("--steps", type=int, default=200)
    p_train.add_argument("--lr", type=float, default=1e-3)
    p_train.add_argument("--alpha", type=float, default=1.0)
    p_train.add_argument("--box-side", type=float, default=100.0)
    p_train.add_argument("--image-side", type=int, default=224)
    p_train.add_argument("--seed", type=int, default=0)
    p_train.set_defaults(func=_cmd_train)

    p_bb = sub.add_parser("export-backbone", help="export backbone weights")
    p_bb.add_argument("--src", required=True,
                      help="random:SEED or torch state-dict path")
    p_bb.add_argument("--out", required=True, help="manifest path to write")
    p_bb.add_argument("--probe-check", action="store_true",
                      help="verify runtime parity on a random probe image")
    p_bb.set_defaults(func=_cmd_export_backbone)

    p_ad = sub.add_parser("export-adapter", help="export untrained adapter banks")
    p_ad.add_argument("--out", required=True)
    p_ad.add_argument("--mode", choices=("identity", "random", "learned-init"),
                      default="identity")
    p_ad.add_argument("--taps", nargs="+",
                      default=["relu3_4", "relu4_4", "relu5_4"])
    p_ad.add_argument("--seed", type=int, default=0)
    p_ad.set_defaults(func=_cmd_export_adapter)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (FileNotFoundError, IOError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except RuntimeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
