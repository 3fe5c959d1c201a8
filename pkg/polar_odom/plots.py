import matplotlib
matplotlib.use("Agg")

import numpy as np
import matplotlib.pyplot as plt
from mpl_toolkits.axes_grid1.anchored_artists import AnchoredSizeBar


def _scale_bar_length(extent):
    """ A round length (1, 2 or 5 times a power of ten) of roughly a fifth of `extent`. """
    target = max(extent / 5.0, 1e-3)
    power = 10.0 ** np.floor(np.log10(target))
    for step in (5.0, 2.0, 1.0):
        if step * power <= target:
            return step * power
    return power


def plot_trajectories(plot_path, estimate, ground_truth=None, title=None, show=False):
    """ Top-down SVG of the estimated path, optionally over ground truth, with start/end markers and a scale bar. """
    fig = plt.figure(figsize=(5, 5))
    ax = plt.gca()

    curves = []
    if ground_truth is not None:
        curves.append(("ground truth", ground_truth.poses, dict(color="k", linestyle="--", linewidth=1.0)))
    curves.append(("estimate", estimate.poses, dict(color="C0", linewidth=1.5)))

    for label, poses, style in curves:
        ax.plot(poses[:, 0], poses[:, 1], label=label, **style)

    start = estimate.poses[0]
    end = estimate.poses[-1]
    ax.plot(start[0], start[1], marker="o", color="C2", linestyle="none", label="start")
    ax.plot(end[0], end[1], marker="s", color="C3", linestyle="none", label="end")

    xy = np.concatenate([c[1][:, :2] for c in curves])
    extent = float(np.max(xy.max(axis=0) - xy.min(axis=0)))
    length = _scale_bar_length(extent if extent > 0 else 1.0)
    ax.add_artist(AnchoredSizeBar(
        ax.transData, length, "{:g} m".format(length), "lower right", pad=0.5, frameon=False, size_vertical=0))

    ax.set_aspect("equal", adjustable="datalim")
    ax.set_xlabel("x (m)")
    ax.set_ylabel("y (m)")
    if title:
        ax.set_title(title)
    ax.legend(loc="upper left", fontsize=8)

    plt.subplots_adjust(left=0.15, bottom=0.1, right=0.97, top=0.93)
    fig.savefig(plot_path, format="svg", metadata={"Date": None})
    if show:
        plt.show()
    plt.close(fig)


def plot_drift_by_length(plot_path, reports, show=False):
    """ Translation drift per segment length, one line per labelled DriftReport. """
    fig, axes = plt.subplots(1, 2, figsize=(8, 3))

    for label, report in sorted(reports.items()):
        lengths = sorted(report.per_length)
        t = [report.per_length[l]["translation_error_percent"] for l in lengths]
        r = [report.per_length[l]["rotation_error_deg_per_100m"] for l in lengths]
        axes[0].plot(lengths, t, marker="o", label="{} {}".format(label, report.format_pair()))
        axes[1].plot(lengths, r, marker="o", label=label)

    axes[0].set_ylabel("translation error (%)")
    axes[1].set_ylabel("rotation error (deg/100 m)")
    for ax in axes:
        ax.set_xlabel("segment length (m)")
    axes[0].legend(loc="upper right", fontsize=8)

    plt.subplots_adjust(left=0.08, bottom=0.17, right=0.98, top=0.95, wspace=.3)
    fig.savefig(plot_path, format="svg", metadata={"Date": None})
    if show:
        plt.show()
    plt.close(fig)
