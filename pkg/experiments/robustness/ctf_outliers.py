from polar_odom import envs

readme = "failure rate of single-stage vs coarse-to-fine registration with 30% clutter reflectors"

durations = dict(
    long=dict(seeds=range(200), n_workers=8),
    short=dict(seeds=range(50), n_workers=4),
    build=dict(seeds=range(2), n_frames=10),
)

presets = ["cfear-3", "cfear-ctf"]

envs.run_named_experiment("ctf_outliers", readme, "turn90-outliers", presets, durations)
