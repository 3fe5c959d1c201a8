import argparse

from polar_odom import envs

readme = "drift with and without per-point motion compensation through the 90 degree turn"

parser = argparse.ArgumentParser()
parser.add_argument("--compensate", choices=["true", "false"], default="true")
args, _ = parser.parse_known_args()

durations = dict(
    long=dict(seeds=range(50), n_workers=8),
    short=dict(seeds=range(10), n_workers=2),
    build=dict(seeds=[0], n_frames=20),
)

envs.run_named_experiment(
    "compensation_{}".format(args.compensate), readme, "turn90", ["cfear-ctf-s10"], durations,
    overrides=[("features.compensate", args.compensate)])
