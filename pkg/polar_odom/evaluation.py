""" Drift metric over 100-800 m subsequences, and trajectory files.

Errors are computed on relative poses only: for every start frame and every
length, the ground-truth and estimated motions between the start frame and the
first frame at least that far along the ground-truth path are compared, and the
pooled means are reported in percent and degrees per 100 m.

"""
import logging
from dataclasses import dataclass, field

import numpy as np

from polar_odom.errors import NoTimeOverlap, ParseError, TooShort
from polar_odom.models.core import Pose2, compose_poses, invert_poses

logger = logging.getLogger(__name__)

LENGTHS = (100, 200, 300, 400, 500, 600, 700, 800)
ASSOCIATION_TOLERANCE = 0.05
_LENGTH_EPS = 1e-9


@dataclass(frozen=True, eq=False)
class Trajectory:
    """ World-frame poses (N, 3) at strictly increasing timestamps (N,). """
    timestamps: np.ndarray
    poses: np.ndarray

    def __post_init__(self):
        t = np.array(self.timestamps, dtype=float).reshape(-1)
        p = np.array(self.poses, dtype=float).reshape(-1, 3)
        if t.shape[0] == 0:
            raise ValueError("trajectory is empty")
        if p.shape[0] != t.shape[0]:
            raise ValueError("{} timestamps but {} poses".format(t.shape[0], p.shape[0]))
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(p))):
            raise ValueError("trajectory holds non-finite values")
        if np.any(np.diff(t) <= 0):
            raise ValueError("trajectory timestamps must be strictly increasing")
        t.setflags(write=False)
        p.setflags(write=False)
        object.__setattr__(self, "timestamps", t)
        object.__setattr__(self, "poses", p)

    @classmethod
    def from_poses(cls, timestamps, poses):
        return cls(timestamps, np.array([p.as_array() for p in poses]))

    def __len__(self):
        return self.timestamps.shape[0]

    def __iter__(self):
        return ((float(t), Pose2.from_array(p)) for t, p in zip(self.timestamps, self.poses))

    def pose(self, i):
        return Pose2.from_array(self.poses[i])

    def distances(self):
        """ Cumulative path length at every pose. """
        steps = np.hypot(np.diff(self.poses[:, 0]), np.diff(self.poses[:, 1]))
        return np.concatenate([[0.0], np.cumsum(steps)])

    @property
    def path_length(self):
        return float(self.distances()[-1])

    def left_composed(self, pose):
        """ Every pose p replaced by pose ∘ p. """
        return Trajectory(self.timestamps, compose_poses(pose.as_array()[None, :], self.poses))


@dataclass
class DriftReport:
    translation_error_percent: float
    rotation_error_deg_per_100m: float
    per_length: dict = field(default_factory=dict)
    n_segments: int = 0
    n_dropped: int = 0

    def format_pair(self):
        return "({:.2f}/{:.2f})".format(self.translation_error_percent, self.rotation_error_deg_per_100m)

    def __str__(self):
        return self.format_pair()

    def to_dict(self):
        return dict(
            translation_error_percent=self.translation_error_percent,
            rotation_error_deg_per_100m=self.rotation_error_deg_per_100m,
            n_segments=self.n_segments,
            n_dropped=self.n_dropped,
            per_length={str(k): v for k, v in self.per_length.items()},
        )


def associate(estimate, ground_truth, tolerance=ASSOCIATION_TOLERANCE):
    """ Pair each estimated pose with the nearest ground-truth timestamp within `tolerance` seconds.

    Returns (estimated poses (M, 3), ground-truth poses (M, 3), number of dropped estimates).

    """
    t_est, t_gt = estimate.timestamps, ground_truth.timestamps
    if t_est[-1] < t_gt[0] - tolerance or t_est[0] > t_gt[-1] + tolerance:
        raise NoTimeOverlap(
            "estimate spans [{:.3f}, {:.3f}] s, ground truth spans [{:.3f}, {:.3f}] s".format(
                t_est[0], t_est[-1], t_gt[0], t_gt[-1]))

    right = np.clip(np.searchsorted(t_gt, t_est), 1, len(t_gt) - 1) if len(t_gt) > 1 else np.zeros(len(t_est), int)
    left = np.maximum(right - 1, 0)
    nearest = np.where(np.abs(t_gt[left] - t_est) <= np.abs(t_gt[right] - t_est), left, right)
    matched = np.abs(t_gt[nearest] - t_est) <= tolerance

    if not np.any(matched):
        raise NoTimeOverlap("no estimated pose lies within {} s of a ground-truth pose".format(tolerance))

    n_dropped = int(np.count_nonzero(~matched))
    if n_dropped:
        logger.warning("{} of {} estimated poses have no ground truth within {} s; dropped".format(
            n_dropped, len(t_est), tolerance))
    return estimate.poses[matched], ground_truth.poses[nearest[matched]], n_dropped


def segment_errors(est_poses, gt_poses, length):
    """ Per-segment (translation error / length, rotation error in rad / length) for one length. """
    steps = np.hypot(np.diff(gt_poses[:, 0]), np.diff(gt_poses[:, 1]))
    dist = np.concatenate([[0.0], np.cumsum(steps)])

    starts = np.arange(len(dist))
    ends = np.searchsorted(dist, dist + length - _LENGTH_EPS, side="left")
    valid = ends < len(dist)
    starts, ends = starts[valid], ends[valid]
    if starts.size == 0:
        return np.zeros(0), np.zeros(0)

    gt_rel = compose_poses(invert_poses(gt_poses[starts]), gt_poses[ends])
    est_rel = compose_poses(invert_poses(est_poses[starts]), est_poses[ends])
    err = compose_poses(invert_poses(gt_rel), est_rel)

    t_err = np.hypot(err[:, 0], err[:, 1]) / length
    r_err = np.abs(err[:, 2]) / length
    return t_err, r_err


def evaluate_drift(estimate, ground_truth, lengths=LENGTHS, tolerance=ASSOCIATION_TOLERANCE):
    est, gt, n_dropped = associate(estimate, ground_truth, tolerance)

    t_all, r_all = [], []
    per_length = {}
    for length in lengths:
        t_err, r_err = segment_errors(est, gt, length)
        if t_err.size == 0:
            continue
        t_all.append(t_err)
        r_all.append(r_err)
        per_length[int(length)] = dict(
            translation_error_percent=float(100.0 * t_err.mean()),
            rotation_error_deg_per_100m=float(np.degrees(r_err.mean()) * 100.0),
            n_segments=int(t_err.size),
        )

    if not t_all:
        path_length = float(np.hypot(np.diff(gt[:, 0]), np.diff(gt[:, 1])).sum())
        raise TooShort("ground-truth path of {:.1f} m holds no full {} m segment".format(path_length, min(lengths)))

    t_all = np.concatenate(t_all)
    r_all = np.concatenate(r_all)
    return DriftReport(
        translation_error_percent=float(100.0 * t_all.mean()),
        rotation_error_deg_per_100m=float(np.degrees(r_all.mean()) * 100.0),
        per_length=per_length,
        n_segments=int(t_all.size),
        n_dropped=n_dropped,
    )


# --- files ---

def write_trajectory(path, trajectory):
    """ One `timestamp x y theta` line per pose, full float precision. """
    with open(path, "w") as f:
        for t, (x, y, theta) in zip(trajectory.timestamps.tolist(), trajectory.poses.tolist()):
            f.write("{!r} {!r} {!r} {!r}\n".format(t, x, y, theta))


def read_trajectory(path):
    timestamps, poses = [], []
    with open(path, "r") as f:
        for line_no, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            fields = line.split()
            if len(fields) != 4:
                raise ParseError("expected 'timestamp x y theta', got {} fields".format(len(fields)), line_no)
            try:
                values = [float(v) for v in fields]
            except ValueError:
                raise ParseError("non-numeric field", line_no)
            if not np.all(np.isfinite(values)):
                raise ParseError("non-finite value", line_no)
            if timestamps and values[0] <= timestamps[-1]:
                raise ParseError("timestamp {!r} does not increase".format(values[0]), line_no)
            timestamps.append(values[0])
            poses.append(values[1:])

    if not timestamps:
        raise ParseError("{} holds no poses".format(path))
    return Trajectory(np.array(timestamps), np.array(poses))


def write_kitti(path, trajectory):
    """ Flattened 3x4 row-major SE(3) matrices with z = 0, one per line. """
    with open(path, "w") as f:
        for x, y, theta in trajectory.poses.tolist():
            c, s = np.cos(theta), np.sin(theta)
            row = [c, -s, 0.0, x, s, c, 0.0, y, 0.0, 0.0, 1.0, 0.0]
            f.write(" ".join("{:.9e}".format(v) for v in row) + "\n")
