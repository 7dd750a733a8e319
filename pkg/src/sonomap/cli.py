"""``sonomap`` command line: one subcommand per pipeline stage plus ``pipeline``.

Exit codes: 0 success, 1 invalid input, 2 stage failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import traceback
from dataclasses import replace

from . import pipeline
from .detect import TrainConfig
from .localize import IOU_THRESHOLDS, ClusterParams

COMMANDS = ("simulate", "detect", "beamform", "fuse", "localize", "evaluate", "pipeline")


def _thresholds(text):
    try:
        vals = tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("need at least one threshold")
    return vals


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("common")
    g.add_argument("--out", default="sonomap-out", help="working/output directory")
    g.add_argument("--profile", default="chiseling", choices=["chiseling", "drilling", "sawing"])
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--jobs", type=int, default=1, help="worker threads")
    g.add_argument("--print-config", action="store_true", help="print the effective configuration and exit")

    s = common.add_argument_group("simulation")
    s.add_argument("--scene", help="scene JSON file (default: random scenes for the profile)")
    s.add_argument("--clips", type=int, default=6)
    s.add_argument("--duration", type=float, default=5.0, help="clip length in seconds")
    s.add_argument("--mics", type=int, default=48)
    s.add_argument("--snr-db", type=float, default=20.0)
    s.add_argument("--cloud-density", type=float, default=2e5, help="surface samples per square metre")

    d = common.add_argument_group("detection")
    d.add_argument("--folds", type=int, help="cross-validation folds (profile default)")
    d.add_argument("--j", type=int, help="relaxed matching tolerance in hop frames (profile default)")
    d.add_argument("--epochs", type=int, default=TrainConfig.epochs)
    d.add_argument("--threshold", type=float, default=TrainConfig.threshold)
    d.add_argument("--predictions-in", help="JSON-lines per-hop probabilities from an external classifier")

    b = common.add_argument_group("beamforming and fusion")
    b.add_argument("--grid-distance", type=float, help="scan plane distance in metres (profile default)")
    b.add_argument("--grid-size", type=float, nargs=2, default=(1.0, 1.0), metavar=("W", "H"))
    b.add_argument("--grid-cells", type=int, nargs=2, default=(100, 100), metavar=("NX", "NY"))
    b.add_argument("--heatmaps-in", help="directory of externally computed heatmaps; skips beamforming")
    b.add_argument("--calibration-noise", action="store_true", help="perturb projections by reprojection noise")

    loc = common.add_argument_group("localization")
    loc.add_argument("--radius", type=float, default=ClusterParams.radius)
    loc.add_argument("--min-weight", type=float, default=ClusterParams.min_weight)
    loc.add_argument("--iou-thresholds", type=_thresholds, default=IOU_THRESHOLDS, help="e.g. 0.05,0.1,0.2,0.4")
    loc.add_argument("--histogram-bin", type=float, default=0.05)

    parser = argparse.ArgumentParser(prog="sonomap", description="Acoustic event detection and 3D localization.")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "simulate": "write synthetic recordings, point clouds and annotations",
        "detect": "train/evaluate the event detector and write detected events",
        "beamform": "acoustic heatmaps at each localization trigger",
        "fuse": "project heatmaps onto the point cloud",
        "localize": "cluster weighted clouds into 3D boxes",
        "evaluate": "detection and localization reports",
        "pipeline": "all stages in order",
    }
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name])
    return parser


def config_from_args(args):
    try:
        cluster = ClusterParams(args.radius, args.min_weight)
        train = replace(TrainConfig(), epochs=args.epochs, threshold=args.threshold, seed=args.seed)
    except ValueError as e:
        raise pipeline.InputError(str(e)) from None
    cfg = pipeline.PipelineConfig(
        out=args.out, profile=args.profile, seed=args.seed, jobs=args.jobs, scene=args.scene, clips=args.clips,
        duration=args.duration, mics=args.mics, snr_db=args.snr_db, cloud_density=args.cloud_density,
        k=args.folds, j=args.j, grid_distance=args.grid_distance, grid_width=args.grid_size[0],
        grid_height=args.grid_size[1], grid_nx=args.grid_cells[0], grid_ny=args.grid_cells[1], cluster=cluster,
        iou_thresholds=args.iou_thresholds, histogram_bin=args.histogram_bin,
        calibration_noise=args.calibration_noise, heatmaps_in=args.heatmaps_in,
        predictions_in=args.predictions_in, train=train,
    )
    cfg.augment = replace(cfg.augment, seed=args.seed)
    return cfg


def _summary(name, result):
    if name in ("evaluate", "pipeline"):
        det = result["detection"]
        print(f"detection (k={det['k']}, j={det['j']}):")
        for mode in ("hard", "relaxed"):
            m = det[mode]
            print(f"  {mode:8s} P {m['precision']['mean']:.3f}±{m['precision']['std']:.3f}  "
                  f"R {m['recall']['mean']:.3f}±{m['recall']['std']:.3f}  "
                  f"F1 {m['f1']['mean']:.3f}±{m['f1']['std']:.3f}")
        loc = result["localization"]
        rec = "  ".join(f"@{t}: {r:.3f}" for t, r in loc["recall"].items())
        print(f"localization recall over {loc['count']} events: {rec}")
    else:
        print(f"{name}: " + ", ".join(f"{k}={v}" for k, v in result.items()))


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = config_from_args(args)
        if args.print_config:
            print(json.dumps(cfg.to_dict(), indent=2, sort_keys=True, default=str))
            return 0
        if args.command == "pipeline":
            result = pipeline.run_pipeline(cfg)
        else:
            result = pipeline.STAGES[args.command](cfg)
    except pipeline.InputError as e:
        print(f"sonomap {args.command}: error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # noqa: BLE001 - any failure inside a stage maps to exit code 2
        print(f"sonomap {args.command}: stage failed: {type(e).__name__}: {e}", file=sys.stderr)
        traceback.print_exc(file=sys.stderr)
        return 2
    _summary(args.command, result)
    return 0


if __name__ == "__main__":
    sys.exit(main())
