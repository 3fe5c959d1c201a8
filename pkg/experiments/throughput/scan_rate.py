from polar_odom import envs

readme = "scans per second on full-size 400 x 3000 polar images"

durations = dict(
    long=dict(seeds=range(5)),
    short=dict(seeds=[0], n_frames=100),
    build=dict(seeds=[0], n_frames=10),
)

envs.run_named_experiment(
    "scan_rate", readme, "corridor500", ["cfear-3", "cfear-ctf", "cfear-ctf-s10"], durations,
    sim_overrides=[("n_bins", "3000")])
