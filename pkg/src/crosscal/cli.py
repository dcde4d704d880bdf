"""Command-line entry points.

Subcommands cover the full workflow: ``simulate`` renders a scene file
into a dataset, ``extract`` runs reference-point extraction for one
sensor, ``calibrate`` solves a sensor pair, and ``evaluate`` scores
results against ground truth and can plot error sweeps.

Exit codes: 0 success, 1 usage error, 2 bad data, 3 pipeline rejection.
"""

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import fileio
from .config import load_config
from .errors import CalibrationError, PoseRejected
from .geometry import angular_error, linear_error
from .registration import calibrate as run_calibration
from .registration import register
from .simulate import load_scene, scene_from_dict

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_REJECTED = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _build_parser():
    parser = _Parser(prog="crosscal", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p_sim = sub.add_parser("simulate",
                           help="render a scene file into a dataset directory")
    p_sim.add_argument("scene", help="scene description (JSON)")
    p_sim.add_argument("--out", required=True, help="output dataset directory")
    p_sim.add_argument("--frames", "-n", type=int, default=30,
                       help="frames per target pose (default 30)")
    p_sim.add_argument("--seed", type=int, default=None, help="override the scene seed")

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="config file (JSON)")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--frames", "-n", type=int, default=None,
                        help="frames accumulated per pose")
    common.add_argument("--poses", "-m", type=int, default=None,
                        help="number of target poses to use")
    common.add_argument("--workers", type=int, default=1,
                        help="worker threads for frame processing")

    p_ext = sub.add_parser("extract", parents=[common],
                           help="extract labeled reference points for one sensor")
    p_ext.add_argument("dataset", help="sensor dataset directory")
    p_ext.add_argument("--modality", required=True,
                       choices=["lidar", "mono", "stereo-range"])
    p_ext.add_argument("--out", required=True, help="output labeled-centers file")

    p_cal = sub.add_parser("calibrate", parents=[common],
                           help="calibrate a sensor pair")
    p_cal.add_argument("dataset_x", help="sensor X dataset directory or centers file")
    p_cal.add_argument("dataset_y", help="sensor Y dataset directory or centers file")
    p_cal.add_argument("--out", required=True, help="output result file")
    p_cal.add_argument("--invert", action="store_true",
                       help="report the transform mapping X into Y instead")

    p_eval = sub.add_parser("evaluate",
                            help="score result files against ground truth")
    p_eval.add_argument("results", nargs="+", help="calibration result files")
    p_eval.add_argument("--truth", required=True, help="ground-truth transform file")
    p_eval.add_argument("--csv", default=None, help="append metric rows to this CSV")
    p_eval.add_argument("--plot", default=None, help="write an error-sweep SVG here")
    p_eval.add_argument("--sweep-by", choices=["M", "N"], default="M",
                        help="x-axis of the sweep plot")
    return parser


def _apply_common(args):
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.frames is not None:
        overrides["n_frames"] = args.frames
    if args.poses is not None:
        overrides["m_poses"] = args.poses
    return load_config(args.config, overrides)


def _limit_poses(recording, m):
    if m is None:
        return recording
    if m < 1 or m > recording.m_poses:
        raise ValueError(f"requested {m} poses, dataset has {recording.m_poses}")
    recording.frames = recording.frames[:m]
    if recording.bounds is not None:
        recording.bounds = recording.bounds[:m]
    return recording


def _dataset_meta(path):
    """Scene-level metadata for a sensor directory, if present."""
    top = os.path.join(os.path.dirname(os.path.abspath(path)), "manifest.json")
    if os.path.exists(top):
        with open(top) as fh:
            return json.load(fh)
    return {}


def cmd_simulate(args):
    with open(args.scene) as fh:
        scene = scene_from_dict(json.load(fh))
    if args.seed is not None:
        scene.seed = args.seed
    if args.frames < 1:
        raise ValueError("--frames must be at least 1")
    fileio.write_dataset(scene, args.out, args.frames)
    n_sensors = len(scene.sensors)
    print(f"wrote {n_sensors} sensors x {scene.m_poses} poses x {args.frames} frames "
          f"to {args.out}")
    return EXIT_OK


def cmd_extract(args):
    config, _ = _apply_common(args)
    recording = fileio.load_recording(args.dataset)
    if recording.modality != args.modality:
        raise ValueError(
            f"dataset is {recording.modality!r}, requested {args.modality!r}")
    _limit_poses(recording, config.m_poses if args.poses is not None else None)
    from .pipeline import extract_recording
    centers, logs = extract_recording(recording, config, workers=args.workers)
    fileio.write_centers(centers, args.out)
    for m in sorted(logs):
        for frame, status in logs[m]:
            print(f"pose {m} frame {frame}: {status}")
    print(f"wrote {4 * len(centers)} labeled centers to {args.out}")
    return EXIT_OK


def _load_side(path, config, args):
    if os.path.isfile(path):
        return fileio.read_centers(path), None
    recording = fileio.load_recording(path)
    _limit_poses(recording, config.m_poses if args.poses is not None else None)
    return None, recording


def cmd_calibrate(args):
    config, overrides = _apply_common(args)
    centers_x, rec_x = _load_side(args.dataset_x, config, args)
    centers_y, rec_y = _load_side(args.dataset_y, config, args)
    if (centers_x is None) != (centers_y is None):
        raise ValueError("mix of dataset directory and centers file is not supported")
    if centers_x is not None:
        result = register(centers_x, centers_y, n_frames=config.n_frames)
        result.meta["setup"] = (f"{os.path.basename(args.dataset_x)}/"
                                f"{os.path.basename(args.dataset_y)}")
    else:
        result = run_calibration(rec_x, rec_y, config, workers=args.workers)
        meta = _dataset_meta(args.dataset_x)
        result.meta["pose_cfg"] = meta.get("name", "")
        result.meta["k"] = meta.get("noise_factor")
        if result.meta["k"] is None:
            result.meta.pop("k")
    result.meta["seed"] = config.seed
    if args.invert:
        result.transform = result.transform.inverse()
        result.meta["setup"] = "/".join(reversed(result.meta.get("setup", "").split("/")))
    fileio.write_result(result, args.out, overrides=overrides or None)
    theta = " ".join(format(v, ".6f") for v in result.transform.params)
    print(f"theta: {theta}")
    print(f"rmse_m: {result.rmse:.6f}")
    print(f"wrote {args.out}")
    return EXIT_OK


def _append_csv(path, rows):
    header = ["setup", "pose_cfg", "K", "M", "N", "e_t_m", "e_r_rad", "rmse_m", "seed"]
    fresh = not os.path.exists(path)
    with open(path, "a", newline="") as fh:
        writer = csv.writer(fh)
        if fresh:
            writer.writerow(header)
        writer.writerows(rows)


def _plot_sweep(rows, sweep_by, path):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    x_key = 3 if sweep_by == "M" else 4
    fig, (ax_t, ax_r) = plt.subplots(1, 2, figsize=(9, 3.5))
    setups = sorted({r[0] for r in rows})
    for setup in setups:
        pts = sorted((r[x_key], r[5], r[6]) for r in rows if r[0] == setup)
        xs = [p[0] for p in pts]
        ax_t.plot(xs, [p[1] for p in pts], marker="o", label=setup)
        ax_r.plot(xs, [p[2] for p in pts], marker="o", label=setup)
    for ax, label in ((ax_t, "linear error (m)"), (ax_r, "angular error (rad)")):
        ax.set_xlabel(sweep_by)
        ax.set_ylabel(label)
        ax.set_yscale("log")
        ax.grid(True, alpha=0.3)
    ax_t.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def cmd_evaluate(args):
    truth = fileio.read_transform(args.truth)
    rows = []
    for res_path in args.results:
        transform, info = fileio.read_result(res_path)
        e_t = linear_error(transform.translation, truth.translation)
        e_r = angular_error(transform.rotation, truth.rotation)
        print(f"{res_path}: e_t={e_t:.6f} m  e_r={e_r:.6f} rad")
        rows.append([
            info["setup"], info["pose_cfg"],
            info["k"] if info["k"] is not None else "",
            info["m_poses"] if info["m_poses"] is not None else "",
            info["n_frames"] if info["n_frames"] is not None else "",
            float(f"{e_t:.9f}"), float(f"{e_r:.9f}"),
            info["rmse"] if info["rmse"] is not None else "",
            info["seed"] if info["seed"] is not None else "",
        ])
    if args.csv:
        _append_csv(args.csv, rows)
    if args.plot:
        plottable = [r for r in rows if r[3] != "" and r[4] != ""]
        _plot_sweep(plottable, args.sweep_by, args.plot)
        print(f"wrote {args.plot}")
    return EXIT_OK


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else EXIT_USAGE
    handlers = {
        "simulate": cmd_simulate,
        "extract": cmd_extract,
        "calibrate": cmd_calibrate,
        "evaluate": cmd_evaluate,
    }
    try:
        return handlers[args.command](args)
    except PoseRejected as err:
        print(f"error: pipeline rejected data: {err}", file=sys.stderr)
        return EXIT_REJECTED
    except CalibrationError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_REJECTED
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
