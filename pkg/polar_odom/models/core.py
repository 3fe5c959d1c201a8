""" SE(2) algebra shared by every stage of the pipeline.

Poses are (x, y, theta) with theta wrapped to (-pi, pi]. Composition is written
left-to-right: `a.compose(b)` is a ∘ b, i.e. b expressed in a's frame. Array
versions operate on (N, 3) arrays of poses so that trajectories and per-point
motion can be handled without Python loops.

"""
from dataclasses import dataclass

import numpy as np

_SMALL_ANGLE = 1e-9


def wrap_angle(theta):
    """ Wrap to (-pi, pi]. Works on scalars and arrays. """
    wrapped = np.pi - np.mod(np.pi - np.asarray(theta, dtype=float), 2 * np.pi)
    if np.ndim(wrapped) == 0:
        return float(wrapped)
    return wrapped


def rotation_matrix(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def _exp_coefficients(omega):
    """ A = sin(w)/w and B = (1 - cos(w))/w with series expansions near zero. """
    omega = np.asarray(omega, dtype=float)
    small = np.abs(omega) < _SMALL_ANGLE
    safe = np.where(small, 1.0, omega)
    A = np.where(small, 1.0 - omega**2 / 6.0, np.sin(safe) / safe)
    B = np.where(small, omega / 2.0 - omega**3 / 24.0, (1.0 - np.cos(safe)) / safe)
    return A, B


@dataclass(frozen=True)
class Pose2:
    x: float = 0.0
    y: float = 0.0
    theta: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "theta", wrap_angle(self.theta))

        if not (np.isfinite(self.x) and np.isfinite(self.y) and np.isfinite(self.theta)):
            raise ValueError("Pose2 components must be finite, got {}".format((self.x, self.y, self.theta)))

    @classmethod
    def identity(cls):
        return cls(0.0, 0.0, 0.0)

    @classmethod
    def from_array(cls, a):
        return cls(a[0], a[1], a[2])

    @classmethod
    def from_matrix(cls, T):
        return cls(T[0, 2], T[1, 2], np.arctan2(T[1, 0], T[0, 0]))

    def as_array(self):
        return np.array([self.x, self.y, self.theta])

    @property
    def translation(self):
        return np.array([self.x, self.y])

    def rotation(self):
        return rotation_matrix(self.theta)

    def matrix(self):
        T = np.eye(3)
        T[:2, :2] = self.rotation()
        T[:2, 2] = self.x, self.y
        return T

    def compose(self, other):
        c, s = np.cos(self.theta), np.sin(self.theta)
        return Pose2(
            self.x + c * other.x - s * other.y,
            self.y + s * other.x + c * other.y,
            self.theta + other.theta)

    def __matmul__(self, other):
        return self.compose(other)

    def inverse(self):
        c, s = np.cos(self.theta), np.sin(self.theta)
        return Pose2(-c * self.x - s * self.y, s * self.x - c * self.y, -self.theta)

    def transform_points(self, points):
        """ Apply to an (N, 2) array of points. """
        points = np.asarray(points, dtype=float)
        return points @ self.rotation().T + self.translation

    def distance_to(self, other):
        return float(np.hypot(self.x - other.x, self.y - other.y))


@dataclass(frozen=True)
class Velocity2:
    """ Body-frame twist: linear velocity (vx, vy) in m/s and yaw rate omega in rad/s. """
    vx: float = 0.0
    vy: float = 0.0
    omega: float = 0.0

    def __post_init__(self):
        if not np.all(np.isfinite([self.vx, self.vy, self.omega])):
            raise ValueError("Velocity2 components must be finite")

    @classmethod
    def zero(cls):
        return cls(0.0, 0.0, 0.0)

    @classmethod
    def from_relative_pose(cls, rel, dt):
        """ Twist that carries the frame along `rel` in `dt` seconds. """
        if dt <= 0:
            raise ValueError("dt must be positive, got {}".format(dt))
        xi = se2_log(rel)
        return cls(xi[0] / dt, xi[1] / dt, xi[2] / dt)

    def as_array(self):
        return np.array([self.vx, self.vy, self.omega])

    def __neg__(self):
        return Velocity2(-self.vx, -self.vy, -self.omega)

    def __mul__(self, dt):
        return Velocity2(self.vx * dt, self.vy * dt, self.omega * dt)

    __rmul__ = __mul__


def se2_exp(xi):
    """ Exponential map of the 3-vector (vx, vy, omega), already scaled by time. """
    vx, vy, omega = (float(v) for v in xi)
    A, B = _exp_coefficients(omega)
    return Pose2(A * vx - B * vy, B * vx + A * vy, omega)


def se2_log(pose):
    theta = pose.theta
    A, B = _exp_coefficients(theta)
    det = A * A + B * B
    x, y = pose.x, pose.y
    return np.array([(A * x + B * y) / det, (-B * x + A * y) / det, theta])


def exp_batch(xi):
    """ Exponential map of an (N, 3) array of scaled twists; returns (N, 3) poses. """
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    A, B = _exp_coefficients(xi[:, 2])
    vx, vy = xi[:, 0], xi[:, 1]
    return np.stack([A * vx - B * vy, B * vx + A * vy, wrap_angle(xi[:, 2])], axis=1)


def compose_poses(a, b):
    """ Element-wise a ∘ b for (N, 3) arrays (either side may broadcast from shape (3,)). """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    c, s = np.cos(a[..., 2]), np.sin(a[..., 2])
    x = a[..., 0] + c * b[..., 0] - s * b[..., 1]
    y = a[..., 1] + s * b[..., 0] + c * b[..., 1]
    return np.stack([x, y, wrap_angle(a[..., 2] + b[..., 2])], axis=-1)


def invert_poses(a):
    a = np.asarray(a, dtype=float)
    c, s = np.cos(a[..., 2]), np.sin(a[..., 2])
    x = -c * a[..., 0] - s * a[..., 1]
    y = s * a[..., 0] - c * a[..., 1]
    return np.stack([x, y, wrap_angle(-a[..., 2])], axis=-1)


def transform_points_batch(poses, points):
    """ Apply pose i to point i; poses (N, 3), points (N, 2). """
    poses = np.asarray(poses, dtype=float)
    c, s = np.cos(poses[:, 2]), np.sin(poses[:, 2])
    px, py = points[:, 0], points[:, 1]
    return np.stack([c * px - s * py + poses[:, 0], s * px + c * py + poses[:, 1]], axis=1)
