from polar_odom import envs

readme = "drift on the 400 m loop with 3 vs 10 keyframes in the sliding window"

durations = dict(
    long=dict(seeds=range(50), n_workers=8),
    short=dict(seeds=range(20), n_workers=4),
    build=dict(seeds=[0], n_frames=40),
)

_, summary = envs.run_named_experiment(
    "keyframe_capacity", readme, "loop400", ["cfear-ctf", "cfear-ctf-s10"], durations)

drift = summary["translation_error_percent"].droplevel("scenario")
print("s10 / ctf drift ratio: {:.3f}".format(drift["cfear-ctf-s10"] / drift["cfear-ctf"]))
