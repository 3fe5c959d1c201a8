""" Named synthetic scenarios and the experiment runner built on them. """
import argparse
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
import pandas as pd

import polar_odom.algs as alg_module
from polar_odom.errors import TooShort, UnknownScenario
from polar_odom.evaluation import Trajectory, evaluate_drift
from polar_odom.models.core import compose_poses
from polar_odom.models.odometry import run_sequence
from polar_odom.synth import PathTrajectory, SimConfig, generate_sequence, inject_outliers, load_world, roadside_world

logger = logging.getLogger(__name__)

SCENARIO_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "scenarios")
FAILURE_DISTANCE = 1.0


def _mixed_path(total=800.0):
    turns = [("straight", 150.0), ("arc", 40.0, 60.0), ("straight", 100.0), ("arc", 25.0, -90.0),
             ("straight", 120.0), ("arc", 60.0, 45.0), ("straight", 80.0), ("arc", 30.0, -60.0)]
    used = sum(p[1] if p[0] == "straight" else p[1] * np.radians(abs(p[2])) for p in turns)
    return tuple(turns) + (("straight", total - used),)


@dataclass(frozen=True)
class Scenario:
    name: str
    path_spec: tuple
    speed: float = 10.0
    frame_rate: float = 4.0
    world_file: str = None
    outlier_fraction: float = 0.0
    description: str = ""

    def path(self):
        return PathTrajectory.from_spec(self.path_spec, self.speed)

    def world(self, seed):
        if self.world_file is not None:
            world = load_world(os.path.join(SCENARIO_DIR, self.world_file))
        else:
            world = roadside_world(self.path(), seed)
        if self.outlier_fraction > 0:
            world = inject_outliers(world, self.outlier_fraction, seed)
        return world

    def sim_config(self, seed, overrides=()):
        return alg_module.apply_overrides(SimConfig(rng_seed=int(seed)), overrides, aliases={})

    def generate(self, seed, sim_overrides=(), n_frames=None):
        """ (scans, ground truth, world) for one seed. """
        world = self.world(seed)
        scans, ground_truth = generate_sequence(
            world, self.path(), self.sim_config(seed, sim_overrides), self.frame_rate, n_frames=n_frames)
        return scans, ground_truth, world


_quarter = (("straight", 100.0 - 5.0 * np.pi), ("arc", 10.0, 90.0))

SCENARIOS = {s.name: s for s in [
    Scenario(
        "corridor500", (("straight", 500.0),), world_file="corridor500.txt",
        description="straight 500 m corridor"),
    Scenario(
        "loop400", _quarter * 4,
        description="closed 400 m loop of four straights and 10 m radius corners, roadside world"),
    Scenario(
        "mixed800", _mixed_path(),
        description="800 m of straights and left/right arcs, roadside world drawn from the seed"),
    Scenario(
        "turn90", (("straight", 60.0), ("arc", 8.0, 90.0), ("straight", 60.0)), world_file="turn90.txt",
        speed=7.0, description="rapid 90 degree turn at an intersection, 8 m radius at 7 m/s (50 deg/s, 0.6 g)"),
    Scenario(
        "turn90-outliers", (("straight", 60.0), ("arc", 8.0, 90.0), ("straight", 60.0)), world_file="turn90.txt",
        speed=7.0, outlier_fraction=0.3, description="turn90 with 30% randomly placed outlier reflectors"),
]}


def scenario_names():
    return sorted(SCENARIOS)


def get_scenario(name):
    try:
        return SCENARIOS[name]
    except KeyError:
        raise UnknownScenario("unknown scenario {!r}; valid scenarios: {}".format(name, ", ".join(scenario_names())))


def align_to_ground_truth(poses, ground_truth):
    """ Odometry starts at the identity; express it in the ground-truth world frame. """
    return compose_poses(ground_truth.poses[:1], poses)


def run_trial(scenario, preset, seed, overrides=(), sim_overrides=(), n_frames=None):
    """ Generate one seeded sequence, run odometry on it and score it. Returns a flat dict. """
    scenario = get_scenario(scenario) if isinstance(scenario, str) else scenario
    config = alg_module.apply_overrides(alg_module.preset(preset), overrides)

    scans, ground_truth, _ = scenario.generate(seed, sim_overrides, n_frames=n_frames)

    start = time.perf_counter()
    updates, stamps, poses = run_sequence(scans, config)
    elapsed = time.perf_counter() - start

    poses = align_to_ground_truth(poses, ground_truth)
    position_error = np.hypot(poses[:, 0] - ground_truth.poses[:, 0], poses[:, 1] - ground_truth.poses[:, 1])

    record = dict(
        scenario=scenario.name, preset=preset, seed=int(seed), n_scans=len(scans),
        max_position_error=float(position_error.max()),
        failed=bool(position_error.max() > FAILURE_DISTANCE),
        n_degenerate=sum(u.degenerate for u in updates),
        n_keyframes=sum(u.keyframe_created for u in updates),
        hz=len(scans) / elapsed if elapsed > 0 else float("inf"),
        translation_error_percent=np.nan, rotation_error_deg_per_100m=np.nan)

    try:
        report = evaluate_drift(Trajectory(stamps, poses), ground_truth)
        record.update(
            translation_error_percent=report.translation_error_percent,
            rotation_error_deg_per_100m=report.rotation_error_deg_per_100m)
    except TooShort:
        pass

    logger.info("{scenario} {preset} seed={seed}: max error {max_position_error:.3f} m, "
                "{translation_error_percent:.2f}% / {rotation_error_deg_per_100m:.2f} deg/100m, "
                "{hz:.1f} Hz".format(**record))
    return record


def _run_trial_kwargs(kwargs):
    return run_trial(**kwargs)


def run_experiment(scenario, presets, seeds, overrides=(), sim_overrides=(), n_frames=None, n_workers=1):
    """ Every (preset, seed) combination; trials are independent and may run in worker processes. """
    jobs = [
        dict(scenario=scenario, preset=p, seed=s, overrides=tuple(overrides),
             sim_overrides=tuple(sim_overrides), n_frames=n_frames)
        for p in presets for s in seeds]

    if n_workers > 1:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            records = list(pool.map(_run_trial_kwargs, jobs))
    else:
        records = [run_trial(**job) for job in jobs]

    return pd.DataFrame.from_records(records)


def summarize(frame):
    """ Mean and spread of the headline numbers per (scenario, preset). """
    return frame.groupby(["scenario", "preset"]).agg(
        seeds=("seed", "count"),
        failure_rate=("failed", "mean"),
        translation_error_percent=("translation_error_percent", "mean"),
        rotation_error_deg_per_100m=("rotation_error_deg_per_100m", "mean"),
        max_position_error=("max_position_error", "max"),
        hz=("hz", "mean"))


def run_named_experiment(name, readme, scenario, presets, durations, overrides=(), sim_overrides=()):
    """ Command-line entry for the scripts under experiments/.

    The first positional argument picks one of `durations`, each a dict with `seeds` and
    optionally `n_frames` and `n_workers`. Per-trial records go to <out>/<name>_<duration>.csv.

    """
    parser = argparse.ArgumentParser(description=readme)
    parser.add_argument("duration", choices=sorted(durations))
    parser.add_argument("--out", default="results")
    parser.add_argument("--workers", type=int, default=None)
    args, _ = parser.parse_known_args()

    duration = durations[args.duration]
    n_workers = args.workers or duration.get("n_workers", 1)

    logger.info("{}: {} on {} with {} ({} seeds, {} workers)".format(
        name, readme, scenario, ", ".join(presets), len(duration["seeds"]), n_workers))

    frame = run_experiment(
        scenario, presets, duration["seeds"], overrides=overrides, sim_overrides=sim_overrides,
        n_frames=duration.get("n_frames"), n_workers=n_workers)

    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "{}_{}.csv".format(name, args.duration))
    frame.to_csv(path, index=False)

    summary = summarize(frame)
    print(summary.to_string())
    logger.info("wrote {}".format(path))
    return frame, summary
