from polar_odom import envs

readme = "drift of the default pipeline on the 800 m mixed route"

durations = dict(
    long=dict(seeds=range(10), n_workers=4),
    short=dict(seeds=range(3), n_workers=1),
    build=dict(seeds=[0], n_frames=40),
)

envs.run_named_experiment("mixed_route", readme, "mixed800", ["cfear-ctf-s10"], durations)
