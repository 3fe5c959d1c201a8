""" Stage-two features: motion compensation and oriented surface points on a grid. """
from dataclasses import dataclass, replace

import numpy as np

from polar_odom.errors import ConfigError
from polar_odom.models.core import Pose2, exp_batch, transform_points_batch

COVARIANCE_FLOOR = 1e-6
RELATIVE_FLOOR = 1e-4
_SIGN_EPS = 1e-12


@dataclass(frozen=True)
class FeatureConfig:
    resolution: float = 3.0
    n_min: int = 6
    compensate: bool = True

    def __post_init__(self):
        if not self.resolution > 0:
            raise ConfigError("features.resolution must be positive, got {}".format(self.resolution))
        if int(self.n_min) != self.n_min or self.n_min < 1:
            raise ConfigError("features.n_min must be a positive integer, got {}".format(self.n_min))


@dataclass(frozen=True)
class SurfacePoint:
    mean: np.ndarray
    covariance: np.ndarray
    normal: np.ndarray
    support: int = 1
    intensity_sum: float = 1.0


@dataclass(frozen=True, eq=False)
class SurfacePointSet:
    """ The sparse set of oriented surface points of one scan, in the sensor frame at `frame_pose`. """
    means: np.ndarray
    covariances: np.ndarray
    normals: np.ndarray
    support: np.ndarray
    intensity_sum: np.ndarray
    cells: np.ndarray
    frame_pose: Pose2 = Pose2()
    resolution: float = 3.0

    @classmethod
    def empty(cls, frame_pose=None, resolution=3.0):
        return cls(
            means=np.zeros((0, 2)), covariances=np.zeros((0, 2, 2)), normals=np.zeros((0, 2)),
            support=np.zeros(0, dtype=np.int64), intensity_sum=np.zeros(0),
            cells=np.zeros((0, 2), dtype=np.int64), frame_pose=frame_pose or Pose2(), resolution=resolution)

    @classmethod
    def from_points(cls, points, frame_pose=None, resolution=3.0):
        """ Build a set from SurfacePoint values (tests, hand-made fixtures). """
        points = list(points)
        if not points:
            return cls.empty(frame_pose, resolution)
        means = np.array([p.mean for p in points], dtype=float)
        return cls(
            means=means,
            covariances=np.array([p.covariance for p in points], dtype=float),
            normals=np.array([p.normal for p in points], dtype=float),
            support=np.array([p.support for p in points], dtype=np.int64),
            intensity_sum=np.array([p.intensity_sum for p in points], dtype=float),
            cells=np.floor(means / resolution).astype(np.int64),
            frame_pose=frame_pose or Pose2(), resolution=resolution)

    def __len__(self):
        return self.means.shape[0]

    def __getitem__(self, i):
        return SurfacePoint(
            mean=self.means[i], covariance=self.covariances[i], normal=self.normals[i],
            support=int(self.support[i]), intensity_sum=float(self.intensity_sum[i]))

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def transformed(self, pose):
        """ Apply `pose` to every mean, covariance and normal. Cells are recomputed; frame_pose is kept. """
        R = pose.rotation()
        means = pose.transform_points(self.means)
        return replace(
            self,
            means=means,
            covariances=R @ self.covariances @ R.T,
            normals=self.normals @ R.T,
            cells=np.floor(means / self.resolution).astype(np.int64))

    def subset(self, indices):
        indices = np.asarray(indices, dtype=np.int64)
        return replace(
            self, means=self.means[indices], covariances=self.covariances[indices],
            normals=self.normals[indices], support=self.support[indices],
            intensity_sum=self.intensity_sum[indices], cells=self.cells[indices])

    def in_world(self):
        """ Means, covariances and normals expressed in the world frame via `frame_pose`. """
        return self.transformed(self.frame_pose)


def motion_compensate(points, twist, t_ref):
    """ Re-express every point in the sensor frame at `t_ref`.

    The sensor frame at time t sits at exp((t - t_ref) * twist) relative to the frame at
    t_ref, so each point is mapped by that relative pose.

    """
    if len(points) == 0:
        return points
    dt = points.times - t_ref
    xi = dt[:, None] * twist.as_array()[None, :]
    return points.with_positions(transform_points_batch(exp_batch(xi), points.positions))


def _orient_normals(normals, means):
    """ Flip normals to face the sensor origin; when perpendicular to the origin direction use +y (then +x). """
    facing = -np.einsum("ij,ij->i", normals, means)
    flip = facing < -_SIGN_EPS
    undecided = np.abs(facing) <= _SIGN_EPS
    fallback_flip = undecided & (
        (normals[:, 1] < -_SIGN_EPS) | ((np.abs(normals[:, 1]) <= _SIGN_EPS) & (normals[:, 0] < 0)))
    sign = np.where(flip | fallback_flip, -1.0, 1.0)
    return normals * sign[:, None]


def compute_surface_points(points, resolution, n_min, frame_pose=None):
    """ One oriented surface point per grid cell holding at least `n_min` filtered points.

    mean        intensity-weighted centroid
    covariance  sum(w (p - mean)(p - mean)^T) / sum(w), eigenvalues floored at
                max(1e-6 m^2, 1e-4 * largest eigenvalue)
    normal      eigenvector of the smallest eigenvalue, facing the sensor origin

    Cells are indexed by floor(coord / resolution) in the sensor frame and emitted in
    ascending (ix, iy) order.

    """
    frame_pose = frame_pose or Pose2()
    if not resolution > 0:
        raise ConfigError("resolution must be positive, got {}".format(resolution))
    if len(points) == 0:
        return SurfacePointSet.empty(frame_pose, resolution)

    positions = points.positions
    w = points.intensities
    cells = np.floor(positions / resolution).astype(np.int64)

    unique_cells, inverse, counts = np.unique(cells, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    n_cells = unique_cells.shape[0]

    w_sum = np.bincount(inverse, weights=w, minlength=n_cells)
    mean_x = np.bincount(inverse, weights=w * positions[:, 0], minlength=n_cells) / w_sum
    mean_y = np.bincount(inverse, weights=w * positions[:, 1], minlength=n_cells) / w_sum
    means = np.stack([mean_x, mean_y], axis=1)

    d = positions - means[inverse]
    sxx = np.bincount(inverse, weights=w * d[:, 0] * d[:, 0], minlength=n_cells) / w_sum
    sxy = np.bincount(inverse, weights=w * d[:, 0] * d[:, 1], minlength=n_cells) / w_sum
    syy = np.bincount(inverse, weights=w * d[:, 1] * d[:, 1], minlength=n_cells) / w_sum

    keep = (counts >= n_min) & np.isfinite(sxx) & np.isfinite(sxy) & np.isfinite(syy)
    if not np.any(keep):
        return SurfacePointSet.empty(frame_pose, resolution)

    cov = np.empty((int(keep.sum()), 2, 2))
    cov[:, 0, 0] = sxx[keep]
    cov[:, 0, 1] = cov[:, 1, 0] = sxy[keep]
    cov[:, 1, 1] = syy[keep]

    eigvals, eigvecs = np.linalg.eigh(cov)
    floor = np.maximum(COVARIANCE_FLOOR, RELATIVE_FLOOR * eigvals[:, 1])
    eigvals = np.maximum(eigvals, floor[:, None])
    cov = eigvecs @ (eigvals[:, :, None] * np.transpose(eigvecs, (0, 2, 1)))
    cov = 0.5 * (cov + np.transpose(cov, (0, 2, 1)))

    means = means[keep]
    normals = _orient_normals(eigvecs[:, :, 0], means)

    return SurfacePointSet(
        means=means, covariances=cov, normals=normals,
        support=counts[keep].astype(np.int64), intensity_sum=w_sum[keep],
        cells=unique_cells[keep], frame_pose=frame_pose, resolution=resolution)
