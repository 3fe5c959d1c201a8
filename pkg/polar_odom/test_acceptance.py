""" Sequence-scale checks over many seeded synthetic runs. Run with --run-slow. """
import time

import numpy as np
import pandas as pd
import pytest

from polar_odom import algs, envs
from polar_odom.models.odometry import RadarOdometry

pytestmark = pytest.mark.slow


def test_drift_on_mixed_route():
    frame = envs.run_experiment("mixed800", ["cfear-ctf-s10"], seeds=[0, 1, 2])
    print(frame[["seed", "translation_error_percent", "rotation_error_deg_per_100m", "hz"]])
    assert np.all(frame["translation_error_percent"] <= 1.0)
    assert np.all(frame["rotation_error_deg_per_100m"] <= 0.5)
    # whole 800 m sequence (320 scans) inside 60 s
    assert np.all(frame["n_scans"] / frame["hz"] <= 60.0)


@pytest.mark.parametrize("scenario", ["turn90-outliers", "turn90"])
def test_coarse_to_fine_fails_no_more_often(scenario):
    frame = envs.run_experiment(scenario, ["cfear-3", "cfear-ctf"], seeds=range(50))
    rates = frame.groupby("preset")["failed"].mean()
    print(rates)
    assert rates["cfear-ctf"] <= rates["cfear-3"]


def test_more_keyframes_drift_less():
    frame = envs.run_experiment("loop400", ["cfear-ctf", "cfear-ctf-s10"], seeds=range(20))
    drift = frame.groupby("preset")["translation_error_percent"].mean()
    print("s10 / ctf drift ratio: {:.3f}".format(drift["cfear-ctf-s10"] / drift["cfear-ctf"]))
    assert drift["cfear-ctf-s10"] <= drift["cfear-ctf"]


def test_throughput():
    scans, _, _ = envs.get_scenario("corridor500").generate(0, [("n_bins", "3000")], n_frames=40)
    odometry = RadarOdometry(algs.preset("cfear-ctf-s10"))

    rows = []
    start = time.perf_counter()
    for scan in scans:
        update = odometry.process_scan(scan)
        rows.append(dict(scan_id=update.scan_id, total_s=update.timings.total))
    elapsed = time.perf_counter() - start

    timing = pd.DataFrame.from_records(rows)
    print(timing.describe())
    assert len(scans) / elapsed >= 30.0
