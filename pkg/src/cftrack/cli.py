"""Command-line entry points: track one sequence, benchmark a dataset,
evaluate stored results.

Exit codes: 0 success, 1 usage error, 2 data error (bad files/datasets),
3 runtime error.
"""

import argparse
import json
import sys
from pathlib import Path

from . import bench
from .adaptation import identity_banks, load_adapter, random_banks
from .errors import ConfigError, DataError
from .runtime import load_network
from .tracker import TrackerConfig

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_RUNTIME = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _resolve_adapter(spec, net):
    """'identity' | 'random:SEED' | path to an adapter file."""
    channels = net.tap_channels()
    if spec == "identity":
        return identity_banks(net.taps, channels)
    if spec.startswith("random:"):
        try:
            seed = int(spec.split(":", 1)[1])
        except ValueError as exc:
            raise DataError(f"bad adapter spec {spec!r}: seed must be an integer") from exc
        return random_banks(channels, seed)
    return load_adapter(spec, tap_channels=channels)


def _build_config(args):
    if getattr(args, "config", None):
        config = TrackerConfig.from_file(args.config)
    else:
        config = TrackerConfig()
    net, weights = load_network(args.net)
    adapter_spec = getattr(args, "adapter", None) or config.adapter
    config.net = net
    config.weights = weights
    config.banks = _resolve_adapter(adapter_spec, net)
    config.adapter = adapter_spec
    return config


def _cmd_track(args):
    config = _build_config(args)
    seq = bench.load_sequence(args.seq)
    result = bench.run_ope(config, seq, preload=args.preload)
    if result.failed:
        print(f"tracking failed on {seq.name}: {result.error}", file=sys.stderr)
        return EXIT_RUNTIME
    curves = bench.evaluate(result, seq.ground_truth)
    payload = {
        "schema": 1,
        "sequence": seq.name,
        "rects": [[r.x, r.y, r.w, r.h] for r in result.rects],
        "frames": result.frames,
        "forward_passes": result.forward_passes,
        "fps": curves.fps,
        "fps_with_io": curves.fps_with_io,
        "dp20": curves.dp20,
        "auc": curves.auc,
    }
    Path(args.out).write_text(json.dumps(payload, indent=1, sort_keys=True))
    print(f"{seq.name}: dp20={curves.dp20:.3f} auc={curves.auc:.3f} "
          f"fps={curves.fps:.1f} forwards/frame={curves.forward_ratio:.2f}")
    return EXIT_OK


def _cmd_bench(args):
    config = _build_config(args)
    report = bench.run_benchmark(args.dataset, config,
                                 preload=args.preload, jobs=args.jobs)
    bench.write_report(args.report, report)
    agg = report.get("aggregate")
    if agg is None:
        print("all sequences failed", file=sys.stderr)
        return EXIT_RUNTIME
    for seq in report["sequences"]:
        if seq.get("failed"):
            print(f"  {seq['name']}: FAILED ({seq['error']})")
        else:
            print(f"  {seq['name']}: dp20={seq['dp20']:.3f} auc={seq['auc']:.3f} "
                  f"fps={seq['fps']:.1f} forwards/frame={seq['forward_ratio']:.2f}")
    print(f"aggregate over {agg['sequences']} sequences: "
          f"dp20={agg['dp20']:.3f} auc={agg['auc']:.3f} fps={agg['fps']:.1f}")
    return EXIT_OK


def _cmd_eval(args):
    data = json.loads(Path(args.results).read_text())
    try:
        rects = [bench.Rect(*map(float, row)) for row in data["rects"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{args.results}: malformed results file ({exc})") from exc
    seq = bench.load_sequence(args.gt)
    if len(rects) != len(seq):
        raise DataError(f"{len(rects)} result rects vs {len(seq)} frames in {args.gt}")
    prec = bench.precision_curve(rects, seq.ground_truth)
    succ = bench.success_curve(rects, seq.ground_truth)
    curves = bench.EvalCurves(precision=prec, success=succ,
                              dp20=float(prec[20]), auc=bench.auc(succ),
                              fps=float(data.get("fps", 0.0)))
    bench.emit_plot_data(curves, args.plots, prefix=f"{seq.name}_")
    summary = {"sequence": seq.name, "dp20": curves.dp20, "auc": curves.auc}
    (Path(args.plots) / f"{seq.name}_summary.json").write_text(
        json.dumps(summary, indent=1, sort_keys=True))
    print(f"{seq.name}: dp20={curves.dp20:.3f} auc={curves.auc:.3f}")
    return EXIT_OK


def build_parser():
    parser = _Parser(prog="cftrack",
                     description="Correlation-filter tracking over adapted "
                                 "convolutional features")
    sub = parser.add_subparsers(dest="command", required=True)

    p_track = sub.add_parser("track", help="track one sequence")
    p_track.add_argument("--seq", required=True, help="sequence directory")
    p_track.add_argument("--net", required=True, help="network manifest file")
    p_track.add_argument("--adapter", default=None,
                         help="adapter file | identity | random:SEED")
    p_track.add_argument("--config", default=None, help="tracker config JSON")
    p_track.add_argument("--out", required=True, help="results JSON path")
    p_track.add_argument("--preload", action="store_true",
                         help="decode all frames before timing")
    p_track.set_defaults(func=_cmd_track)

    p_bench = sub.add_parser("bench", help="run OPE over a dataset directory")
    p_bench.add_argument("--dataset", required=True)
    p_bench.add_argument("--net", required=True, help="network manifest file")
    p_bench.add_argument("--adapter", default=None,
                         help="adapter file | identity | random:SEED")
    p_bench.add_argument("--config", default=None, help="tracker config JSON")
    p_bench.add_argument("--report", required=True, help="report JSON path")
    p_bench.add_argument("--preload", action="store_true")
    p_bench.add_argument("--jobs", type=int, default=1)
    p_bench.set_defaults(func=_cmd_bench)

    p_eval = sub.add_parser("eval", help="evaluate a stored results file")
    p_eval.add_argument("--results", required=True)
    p_eval.add_argument("--gt", required=True, help="sequence directory")
    p_eval.add_argument("--plots", required=True, help="output directory for CSVs")
    p_eval.set_defaults(func=_cmd_eval)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # pragma: no cover - last-resort guard
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
