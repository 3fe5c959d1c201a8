""" Command-line front end: run odometry over a scan directory, score it, simulate sequences, plot paths.

    polar-odom run   --input scans/ --format csv --preset cfear-ctf-s10 --out out/
    polar-odom eval  --input out/trajectory.txt --gt data/ground_truth.txt --out out/
    polar-odom synth --scenario loop400 --seed 7 --out data/
    polar-odom plot  --input out/trajectory.txt --gt data/ground_truth.txt --svg out/trajectory.svg

Exit codes: 0 ok, 2 input or configuration error, 3 evaluation infeasible.

"""
import argparse
import json
import logging
import os
import sys
import time

import numpy as np
import pandas as pd

from polar_odom import algs, envs
from polar_odom.datasets.polar import (
    RangeMeta, load_polar_csv, load_polar_image, write_polar_csv, write_polar_image)
from polar_odom.errors import (
    ConfigError, EmptyScan, EvaluationError, NonMonotoneTimestamps, ParseError, RegistrationError, ScanError)
from polar_odom.evaluation import Trajectory, evaluate_drift, read_trajectory, write_kitti, write_trajectory
from polar_odom.models.odometry import RadarOdometry
from polar_odom.synth import write_world

logger = logging.getLogger("polar_odom")

SCAN_EXTENSIONS = {"csv": (".csv",), "image": (".png",)}
META_FILE = "meta.yaml"

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_EVALUATION = 3


def _write_json_atomic(path, data):
    tmp = "{}.tmp".format(path)
    with open(tmp, "w") as f:
        json.dump(data, f, indent=2, sort_keys=True)
        f.write("\n")
    os.replace(tmp, path)


def _list_scans(directory, fmt):
    if not os.path.isdir(directory):
        raise ScanError("input directory {} does not exist".format(directory))
    names = sorted(n for n in os.listdir(directory) if n.lower().endswith(SCAN_EXTENSIONS[fmt]))
    if not names:
        raise EmptyScan("no {} scans in {}".format(fmt, directory))
    return [os.path.join(directory, n) for n in names]


def _scan_loader(args, config):
    if args.format == "csv":
        return load_polar_csv

    meta = config.scan
    sidecar = os.path.join(args.input, META_FILE)
    if os.path.exists(sidecar):
        meta = RangeMeta.from_sidecar(sidecar)
        logger.info("range metadata from {}".format(sidecar))
    return lambda path: load_polar_image(path, meta)


def _stage_hz(seconds):
    mean = float(np.mean(seconds)) if len(seconds) else 0.0
    return 1.0 / mean if mean > 0 else None


def cmd_run(args):
    config, _ = algs.build_config(args.preset, args.config, algs.parse_set_args(args.set))
    paths = _list_scans(args.input, args.format)
    load = _scan_loader(args, config)
    os.makedirs(args.out, exist_ok=True)

    logger.info("running {} on {} scans from {}".format(config.name, len(paths), args.input))
    odometry = RadarOdometry(config)

    rows, stamps, poses = [], [], []
    start = time.perf_counter()
    for path in paths:
        scan = load(path)
        update = odometry.process_scan(scan)
        if stamps and update.timestamp <= stamps[-1]:
            raise NonMonotoneTimestamps("{}: scan time {} does not follow {}".format(path, update.timestamp, stamps[-1]))
        stamps.append(update.timestamp)
        poses.append(update.pose.as_array())
        rows.append(dict(
            scan_id=update.scan_id, file=os.path.basename(path), timestamp=update.timestamp,
            filter_s=update.timings.filter, features_s=update.timings.features,
            registration_s=update.timings.registration, total_s=update.timings.total,
            n_filtered=update.n_filtered, n_surface_points=update.n_surface_points,
            degenerate=update.degenerate, keyframe=update.keyframe_created,
            compensation_passes=update.compensation_passes))
    elapsed = time.perf_counter() - start

    trajectory = Trajectory(np.array(stamps), np.array(poses))
    trajectory_path = os.path.join(args.out, "trajectory.txt")
    write_trajectory(trajectory_path, trajectory)
    write_kitti(os.path.join(args.out, "trajectory_kitti.txt"), trajectory)

    timing = pd.DataFrame.from_records(rows)
    timing.to_csv(os.path.join(args.out, "timing.csv"), index=False)

    n_degenerate = int(timing["degenerate"].sum())
    if n_degenerate:
        logger.warning("{} of {} scans fell back to the constant-velocity prediction".format(n_degenerate, len(paths)))

    manifest = dict(
        input=os.path.abspath(args.input),
        format=args.format,
        preset=config.name,
        overrides=args.set or [],
        config_file=args.config,
        output=os.path.abspath(args.out),
        trajectory=os.path.abspath(trajectory_path),
        n_scans=len(paths),
        n_degenerate=n_degenerate,
        n_keyframes=int(timing["keyframe"].sum()),
        timing=dict(
            loop_hz=len(paths) / elapsed if elapsed > 0 else None,
            pipeline_hz=_stage_hz(timing["total_s"]),
            filter_hz=_stage_hz(timing["filter_s"]),
            features_hz=_stage_hz(timing["features_s"]),
            registration_hz=_stage_hz(timing["registration_s"]),
        ),
    )

    if args.gt:
        ground_truth = read_trajectory(args.gt)
        try:
            report = evaluate_drift(trajectory, ground_truth)
            manifest["drift"] = report.format_pair()
            _write_json_atomic(os.path.join(args.out, "drift.json"), report.to_dict())
            print(report.format_pair())
        except EvaluationError as e:
            logger.warning("drift not evaluated: {}".format(e))
    else:
        ground_truth = None

    if args.svg:
        from polar_odom.plots import plot_trajectories
        plot_trajectories(args.svg, trajectory, ground_truth, title=config.name)

    _write_json_atomic(os.path.join(args.out, "manifest.json"), manifest)
    logger.info("wrote {} poses to {} ({:.1f} scans/s)".format(len(trajectory), trajectory_path, manifest["timing"]["loop_hz"] or 0.0))
    return EXIT_OK


def cmd_eval(args):
    if not args.gt:
        raise ConfigError("eval needs --gt")
    estimate = read_trajectory(args.input)
    ground_truth = read_trajectory(args.gt)

    report = evaluate_drift(estimate, ground_truth)
    print(report.format_pair())

    out = args.out or os.path.dirname(os.path.abspath(args.input))
    os.makedirs(out, exist_ok=True)
    _write_json_atomic(os.path.join(out, "drift.json"), report.to_dict())
    return EXIT_OK


def cmd_synth(args):
    scenario = envs.get_scenario(args.scenario)
    sim_overrides = [(k[len("sim."):] if k.startswith("sim.") else k, v) for k, v in algs.parse_set_args(args.set)]

    scans, ground_truth, world = scenario.generate(args.seed, sim_overrides, n_frames=args.frames)

    scan_dir = os.path.join(args.out, "scans")
    os.makedirs(scan_dir, exist_ok=True)
    for scan in scans:
        name = "scan_{:06d}".format(scan.scan_id)
        if args.format == "image":
            write_polar_image(os.path.join(scan_dir, name + ".png"), scan)
        else:
            write_polar_csv(os.path.join(scan_dir, name + ".csv"), scan)

    sim = scenario.sim_config(args.seed, sim_overrides)
    if args.format == "image":
        with open(os.path.join(scan_dir, META_FILE), "w") as f:
            f.write(
                "scan:\n  range_resolution: {!r}\n  range_offset: {!r}\n  sweep_duration: {!r}\n"
                "  frame_period: {!r}\n".format(
                    sim.range_resolution, sim.range_offset, sim.sweep_duration, 1.0 / scenario.frame_rate))

    write_trajectory(os.path.join(args.out, "ground_truth.txt"), ground_truth)
    write_world(os.path.join(args.out, "world.txt"), world)
    _write_json_atomic(os.path.join(args.out, "manifest.json"), dict(
        scenario=scenario.name, seed=args.seed, n_frames=len(scans), format=args.format,
        frame_rate=scenario.frame_rate, speed=scenario.speed, path_length=ground_truth.path_length,
        sim={k: getattr(sim, k) for k in sim.__dataclass_fields__}))

    logger.info("wrote {} {} sweeps of {} (seed {}) to {}".format(len(scans), args.format, scenario.name, args.seed, args.out))
    return EXIT_OK


def cmd_plot(args):
    from polar_odom.plots import plot_trajectories

    estimate = read_trajectory(args.input)
    ground_truth = read_trajectory(args.gt) if args.gt else None
    svg = args.svg or os.path.splitext(args.input)[0] + ".svg"
    plot_trajectories(svg, estimate, ground_truth, title=args.title)
    logger.info("wrote {}".format(svg))
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="polar-odom", description="Spinning-radar odometry on polar scans.")
    parser.add_argument("--verbose", "-v", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command")
    sub.required = True

    run = sub.add_parser("run", help="estimate a trajectory from a directory of scans")
    run.add_argument("--input", required=True, help="directory of scans, processed in filename order")
    run.add_argument("--format", choices=sorted(SCAN_EXTENSIONS), default="csv")
    run.add_argument("--preset", default=None, help="one of {}".format(", ".join(algs.preset_names())))
    run.add_argument("--config", default=None, help="YAML config file")
    run.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config value, repeatable")
    run.add_argument("--out", required=True)
    run.add_argument("--gt", default=None, help="ground-truth trajectory to score against")
    run.add_argument("--svg", default=None, help="also write a trajectory plot here")
    run.set_defaults(func=cmd_run)

    ev = sub.add_parser("eval", help="drift of an estimated trajectory against ground truth")
    ev.add_argument("--input", required=True)
    ev.add_argument("--gt", required=True)
    ev.add_argument("--out", default=None)
    ev.set_defaults(func=cmd_eval)

    synth = sub.add_parser("synth", help="simulate a named scenario")
    synth.add_argument("--scenario", required=True, help="one of {}".format(", ".join(envs.scenario_names())))
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--frames", type=int, default=None, help="number of sweeps (default: the whole path)")
    synth.add_argument("--format", choices=sorted(SCAN_EXTENSIONS), default="csv")
    synth.add_argument("--set", action="append", metavar="KEY=VALUE", help="simulator override, e.g. sim.noise_floor=0")
    synth.add_argument("--out", required=True)
    synth.set_defaults(func=cmd_synth)

    plot = sub.add_parser("plot", help="SVG plot of a trajectory")
    plot.add_argument("--input", required=True)
    plot.add_argument("--gt", default=None)
    plot.add_argument("--svg", default=None)
    plot.add_argument("--title", default=None)
    plot.set_defaults(func=cmd_plot)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s")

    try:
        return args.func(args)
    except EvaluationError as e:
        logger.error("{}: {}".format(type(e).__name__, e))
        return EXIT_EVALUATION
    except (ScanError, ParseError, ConfigError, RegistrationError, OSError) as e:
        logger.error("{}: {}".format(type(e).__name__, e))
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
