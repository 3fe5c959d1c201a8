""" Scan-to-multi-keyframe registration.

The current surface-point set M^t is registered against every keyframe in the
queue at once by minimizing

    sum_k sum_{(i, j) in C_k}  w_ij * L(g(m^k_j, m^t_i, x))

over the world pose x of the current scan. Correspondences come from the keyframe
hash grids, g is one of three distance metrics, w is a normal-similarity weight
and L is a Huber or Cauchy loss. The solver alternates association and
Levenberg-Marquardt, optionally with a coarse-to-fine schedule (Huber and a wide
radius first, Cauchy and a tight radius afterwards).

All residual work is vectorized over correspondences; reductions use a fixed
order so results are reproducible bit-for-bit.

"""
import enum
import logging
from dataclasses import dataclass, field

import numpy as np

from polar_odom.errors import ConfigError, DegenerateRegistration, RadiusExceedsCell
from polar_odom.models.core import Pose2, compose_poses, invert_poses, transform_points_batch, wrap_angle
from polar_odom.models.hash_grid import HashGrid, stack_grids

logger = logging.getLogger(__name__)


class ResidualMetric(enum.Enum):
    POINT_TO_POINT = "p2p"
    POINT_TO_LINE = "p2l"
    POINT_TO_DISTRIBUTION = "p2d"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ConfigError("unknown metric {!r}, expected one of {}".format(value, [m.value for m in cls]))


class LossKind(enum.Enum):
    HUBER = "huber"
    CAUCHY = "cauchy"


@dataclass(frozen=True)
class RobustLoss:
    kind: LossKind
    scale: float

    def __post_init__(self):
        if not self.scale > 0:
            raise ConfigError("loss scale must be positive, got {}".format(self.scale))

    @classmethod
    def huber(cls, delta):
        return cls(LossKind.HUBER, delta)

    @classmethod
    def cauchy(cls, scale):
        return cls(LossKind.CAUCHY, scale)

    def __call__(self, r):
        a = np.abs(np.asarray(r, dtype=float))
        s = self.scale
        if self.kind is LossKind.HUBER:
            return np.where(a <= s, 0.5 * a * a, s * (a - 0.5 * s))
        return 0.5 * s * s * np.log1p((a / s) ** 2)

    def derivative(self, r):
        r = np.asarray(r, dtype=float)
        s = self.scale
        if self.kind is LossKind.HUBER:
            return np.clip(r, -s, s)
        return r / (1.0 + (r / s) ** 2)

    def weight(self, r):
        """ derivative(r) / r, the iteratively-reweighted least-squares weight (1 at r = 0). """
        a = np.abs(np.asarray(r, dtype=float))
        s = self.scale
        if self.kind is LossKind.HUBER:
            return np.where(a <= s, 1.0, s / np.maximum(a, s))
        return 1.0 / (1.0 + (a / s) ** 2)


@dataclass(frozen=True)
class RegistrationConfig:
    metric: str = "p2d"
    huber_delta: float = 0.1
    cauchy_scale: float = 0.1
    ctf_enabled: bool = False
    huber_iterations: int = 2
    max_outer: int = 8
    max_inner: int = 10
    radius_coarse: float = None
    radius_fine: float = None
    update_tolerance: float = 1e-4
    min_correspondences: int = 6
    degenerate_spread_deg: float = 10.0

    def __post_init__(self):
        ResidualMetric.parse(self.metric)
        if self.max_outer < 1 or self.max_inner < 1:
            raise ConfigError("reg.max_outer and reg.max_inner must be >= 1")
        for name in ("radius_coarse", "radius_fine"):
            value = getattr(self, name)
            if value is not None and not value > 0:
                raise ConfigError("reg.{} must be positive, got {}".format(name, value))

    def schedule(self, resolution):
        radius_fine = self.radius_fine if self.radius_fine is not None else resolution
        radius_coarse = self.radius_coarse if self.radius_coarse is not None else 2.0 * resolution
        return CoarseToFineSchedule(
            huber_delta=self.huber_delta, cauchy_scale=self.cauchy_scale,
            radius_coarse=radius_coarse, radius_fine=radius_fine,
            huber_iterations=self.huber_iterations, max_outer=self.max_outer,
            ctf_enabled=self.ctf_enabled, max_inner=self.max_inner,
            update_tolerance=self.update_tolerance, min_correspondences=self.min_correspondences,
            degenerate_spread_deg=self.degenerate_spread_deg)


@dataclass(frozen=True)
class CoarseToFineSchedule:
    huber_delta: float = 0.1
    cauchy_scale: float = 0.1
    radius_coarse: float = 6.0
    radius_fine: float = 3.0
    huber_iterations: int = 2
    max_outer: int = 8
    ctf_enabled: bool = True
    max_inner: int = 10
    update_tolerance: float = 1e-4
    min_correspondences: int = 6
    degenerate_spread_deg: float = 10.0

    def in_coarse_phase(self, n):
        """ n is the 0-based outer iteration. """
        return self.ctf_enabled and n < self.huber_iterations

    def loss(self, n):
        if not self.ctf_enabled or n < self.huber_iterations:
            return RobustLoss.huber(self.huber_delta)
        return RobustLoss.cauchy(self.cauchy_scale)

    def radius(self, n):
        return self.radius_coarse if self.in_coarse_phase(n) else self.radius_fine

    @property
    def cell_size(self):
        if self.ctf_enabled:
            return max(self.radius_coarse, self.radius_fine)
        return self.radius_fine


@dataclass(frozen=True)
class Correspondence:
    source_index: int
    keyframe_index: int
    target_index: int
    weight: float


@dataclass
class SolveReport:
    iterations: int = 0
    inner_iterations: int = 0
    final_cost: float = 0.0
    n_correspondences: int = 0
    degenerate: bool = False
    converged: bool = False
    history: list = field(default_factory=list)
    # accepted costs of each outer iteration, starting cost first
    cost_traces: list = field(default_factory=list)


# --- residuals ---

def _residual_terms(metric, src_means, src_covs, tgt_means, tgt_normals, tgt_covs, pose):
    """ Residuals g, their gradients dg/d(x, y, theta) and Gauss-Newton blocks for M correspondences.

    The Gauss-Newton block is J_d^T W J_d, where J_d is the Jacobian of the mapped source
    mean and W the metric's weight matrix (I, n n^T or Sigma^-1 frozen at the current pose).

    """
    x, y, theta = pose
    c, s = np.cos(theta), np.sin(theta)

    rx = c * src_means[:, 0] - s * src_means[:, 1]
    ry = s * src_means[:, 0] + c * src_means[:, 1]
    d = np.stack([rx + x - tgt_means[:, 0], ry + y - tgt_means[:, 1]], axis=1)

    m = d.shape[0]
    Jd = np.zeros((m, 2, 3))
    Jd[:, 0, 0] = 1.0
    Jd[:, 1, 1] = 1.0
    Jd[:, 0, 2] = -ry
    Jd[:, 1, 2] = rx

    if metric is ResidualMetric.POINT_TO_POINT:
        g = np.sqrt(d[:, 0] ** 2 + d[:, 1] ** 2)
        grad = np.einsum("mi,mij->mj", d, Jd)
        safe = np.where(g > 0, g, 1.0)
        Jg = np.where(g[:, None] > 0, grad / safe[:, None], 0.0)
        H = np.einsum("mki,mkj->mij", Jd, Jd)

    elif metric is ResidualMetric.POINT_TO_LINE:
        e = np.einsum("mi,mi->m", tgt_normals, d)
        Je = np.einsum("mi,mij->mj", tgt_normals, Jd)
        g = np.abs(e)
        Jg = np.sign(e)[:, None] * Je
        H = Je[:, :, None] * Je[:, None, :]

    else:
        R = np.array([[c, -s], [s, c]])
        dR = np.array([[-s, -c], [c, -s]])
        cov = tgt_covs + R @ src_covs @ R.T
        a, b, dd = cov[:, 0, 0], cov[:, 0, 1], cov[:, 1, 1]
        det = a * dd - b * b
        if np.any(det <= 0):
            raise DegenerateRegistration("combined covariance is not positive definite")
        inv = np.empty_like(cov)
        inv[:, 0, 0] = dd / det
        inv[:, 1, 1] = a / det
        inv[:, 0, 1] = inv[:, 1, 0] = -b / det

        u = np.einsum("mij,mj->mi", inv, d)
        e2 = np.einsum("mi,mi->m", d, u)
        g = np.sqrt(np.maximum(e2, 0.0))

        de2 = 2.0 * np.einsum("mi,mij->mj", u, Jd)
        dcov = dR @ src_covs @ R.T + R @ src_covs @ dR.T
        de2[:, 2] -= np.einsum("mi,mij,mj->m", u, dcov, u)

        safe = np.where(g > 0, g, 1.0)
        Jg = np.where(g[:, None] > 0, de2 / (2.0 * safe[:, None]), 0.0)
        H = np.einsum("mki,mkl,mlj->mij", Jd, inv, Jd)

    return g, Jg, H


def residual_g(metric, target, source, pose):
    """ Residual of one correspondence and its gradient with respect to (x, y, theta).

    `target` lives in the frame that `pose` maps `source` into.

    """
    metric = ResidualMetric.parse(metric)
    g, Jg, _ = _residual_terms(
        metric,
        np.asarray(source.mean, dtype=float)[None, :],
        np.asarray(source.covariance, dtype=float)[None, :, :],
        np.asarray(target.mean, dtype=float)[None, :],
        np.asarray(target.normal, dtype=float)[None, :],
        np.asarray(target.covariance, dtype=float)[None, :, :],
        pose.as_array())
    return float(g[0]), Jg[0]


def _similarity(normals_a, normals_b):
    dot = np.abs(np.einsum("mi,mi->m", normals_a, normals_b))
    return (0.5 * (1.0 + np.minimum(dot, 1.0))) ** 2


def similarity_weight(a, b):
    """ (0.5 * (1 + |n_a . n_b|))^2: 1 for parallel or anti-parallel normals, 0.25 for perpendicular. """
    return float(_similarity(np.asarray(a.normal)[None, :], np.asarray(b.normal)[None, :])[0])


# --- keyframe targets ---

class RegistrationTargets:
    """ World-frame view of a set of keyframes plus one stacked hash grid over all of them.

    `keyframes` may hold SurfacePointSets (their frame_pose is the keyframe pose) or
    objects with `.set` and optional `.grid` attributes.

    """
    def __init__(self, keyframes, cell_size):
        self.cell_size = float(cell_size)
        self.sets = []
        grids = []
        for kf in keyframes:
            kf_set = getattr(kf, "set", kf)
            grid = getattr(kf, "grid", None)
            if grid is None or grid.cell_size != self.cell_size:
                grid = HashGrid(self.cell_size, kf_set.means)
            self.sets.append(kf_set)
            grids.append(grid)

        self.n_keyframes = len(self.sets)
        self.frame_poses = np.array([s.frame_pose.as_array() for s in self.sets]).reshape(-1, 3)
        self.inverse_poses = invert_poses(self.frame_poses)

        if self.n_keyframes:
            self.grid, self.offsets = stack_grids(grids)
            world = [s.in_world() for s in self.sets]
            self.means = np.concatenate([w.means for w in world]).reshape(-1, 2)
            self.covariances = np.concatenate([w.covariances for w in world]).reshape(-1, 2, 2)
            self.normals = np.concatenate([w.normals for w in world]).reshape(-1, 2)
            self.keyframe_of = np.repeat(np.arange(self.n_keyframes), [len(s) for s in self.sets])
        else:
            self.grid, self.offsets = None, np.zeros(1, dtype=np.int64)
            self.means = np.zeros((0, 2))
            self.covariances = np.zeros((0, 2, 2))
            self.normals = np.zeros((0, 2))
            self.keyframe_of = np.zeros(0, dtype=np.int64)

    def associate(self, current, pose, radius):
        """ Nearest target in every keyframe for every current point.

        Returns (source indices, global target indices, similarity weights).

        """
        empty = (np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64), np.zeros(0))
        n = len(current)
        if n == 0 or self.grid is None or len(self.grid) == 0:
            return empty
        if radius > self.cell_size:
            raise RadiusExceedsCell("association radius {} exceeds grid cell size {}".format(radius, self.cell_size))

        pose = np.asarray(pose, dtype=float)
        to_keyframe = compose_poses(self.inverse_poses, pose[None, :])
        per_query = np.repeat(to_keyframe, n, axis=0)
        queries = transform_points_batch(per_query, np.tile(current.means, (self.n_keyframes, 1)))
        groups = np.repeat(np.arange(self.n_keyframes, dtype=np.int64), n)

        found, _ = self.grid.nearest_within_batch(queries, radius, groups=groups)
        hit = found >= 0
        if not np.any(hit):
            return empty

        src = np.tile(np.arange(n, dtype=np.int64), self.n_keyframes)[hit]
        tgt = found[hit]

        c, s = np.cos(pose[2]), np.sin(pose[2])
        src_normals = current.normals[src] @ np.array([[c, -s], [s, c]]).T
        weights = _similarity(src_normals, self.normals[tgt])
        return src, tgt, weights

    def to_local(self, tgt):
        """ Global target indices -> (keyframe index, index within that keyframe's set). """
        kf = self.keyframe_of[tgt]
        return kf, tgt - self.offsets[kf]


def _as_targets(keyframes, cell_size):
    if isinstance(keyframes, RegistrationTargets):
        return keyframes
    return RegistrationTargets(keyframes, cell_size)


class _Problem:
    """ Robust least squares for a fixed set of correspondences. """

    def __init__(self, metric, loss, targets, current, src, tgt, weights):
        self.metric = metric
        self.loss = loss
        self.weights = weights
        self.src_means = current.means[src]
        self.src_covs = current.covariances[src]
        self.tgt_means = targets.means[tgt]
        self.tgt_normals = targets.normals[tgt]
        self.tgt_covs = targets.covariances[tgt]

    def terms(self, pose):
        return _residual_terms(
            self.metric, self.src_means, self.src_covs, self.tgt_means, self.tgt_normals, self.tgt_covs, pose)

    def cost(self, pose):
        g, _, _ = self.terms(pose)
        return float(np.dot(self.weights, self.loss(g)))

    def normal_equations(self, pose):
        g, Jg, H = self.terms(pose)
        cost = float(np.dot(self.weights, self.loss(g)))
        hess = np.einsum("m,mij->ij", self.weights * self.loss.weight(g), H)
        grad = (self.weights * self.loss.derivative(g)) @ Jg
        return cost, grad, hess


def evaluate_cost(metric, loss, keyframes, current, pose, radius, cell_size=None):
    """ Weighted robust cost at `pose` and the correspondences it was computed from. """
    metric = ResidualMetric.parse(metric)
    targets = _as_targets(keyframes, cell_size if cell_size is not None else radius)
    pose_arr = pose.as_array() if isinstance(pose, Pose2) else np.asarray(pose, dtype=float)

    src, tgt, weights = targets.associate(current, pose_arr, radius)
    if src.size == 0:
        return 0.0, []

    cost = _Problem(metric, loss, targets, current, src, tgt, weights).cost(pose_arr)
    kf, local = targets.to_local(tgt)
    correspondences = [
        Correspondence(int(i), int(k), int(j), float(w))
        for i, k, j, w in zip(src.tolist(), kf.tolist(), local.tolist(), weights.tolist())]
    return cost, correspondences


def normal_spread_deg(normals):
    """ Largest angular deviation (degrees) of line directions from their mean direction. """
    if len(normals) == 0:
        return 0.0
    doubled = 2.0 * np.arctan2(normals[:, 1], normals[:, 0])
    mean = np.arctan2(np.sin(doubled).sum(), np.cos(doubled).sum())
    return float(np.degrees(np.max(np.abs(wrap_angle(doubled - mean))) / 2.0))


def _levenberg_marquardt(problem, pose, schedule, report):
    lam = 1e-4
    cost, grad, hess = problem.normal_equations(pose)
    trace = [cost]
    report.cost_traces.append(trace)

    eigvals = np.linalg.eigvalsh(hess)
    if not np.all(np.isfinite(eigvals)) or eigvals[0] <= 1e-12 * max(eigvals[-1], 1e-300):
        raise DegenerateRegistration("normal equations are rank deficient", report)

    for _ in range(schedule.max_inner):
        report.inner_iterations += 1
        damped = hess + lam * np.diag(np.diag(hess))
        try:
            delta = np.linalg.solve(damped, -grad)
        except np.linalg.LinAlgError:
            raise DegenerateRegistration("damped normal equations are singular", report)

        if np.linalg.norm(delta) < schedule.update_tolerance:
            break

        candidate = pose + delta
        candidate[2] = wrap_angle(candidate[2])
        new_cost = problem.cost(candidate)

        if new_cost < cost:
            pose = candidate
            lam /= 3.0
            cost, grad, hess = problem.normal_equations(pose)
            trace.append(cost)
        else:
            lam *= 10.0
            if lam > 1e12:
                break

    return pose, cost


def solve(metric, schedule, keyframes, current, init):
    """ Register `current` against `keyframes` starting from `init`.

    Returns (Pose2, SolveReport). Raises DegenerateRegistration when the problem has too
    few correspondences, is rank deficient, or its constraints all share one direction.

    """
    metric = ResidualMetric.parse(metric)
    targets = _as_targets(keyframes, schedule.cell_size)
    report = SolveReport()
    pose = init.as_array()

    for n in range(schedule.max_outer):
        loss = schedule.loss(n)
        radius = schedule.radius(n)

        src, tgt, weights = targets.associate(current, pose, radius)
        report.iterations = n + 1
        report.n_correspondences = int(src.size)
        if src.size < schedule.min_correspondences:
            report.degenerate = True
            raise DegenerateRegistration(
                "{} correspondences at iteration {}, need {}".format(src.size, n + 1, schedule.min_correspondences),
                report)

        problem = _Problem(metric, loss, targets, current, src, tgt, weights)
        new_pose, cost = _levenberg_marquardt(problem, pose, schedule, report)

        step = new_pose - pose
        step[2] = wrap_angle(step[2])
        pose = new_pose
        report.final_cost = cost
        report.history.append((loss.kind.value, radius, cost, int(src.size)))

        if not np.all(np.isfinite(pose)):
            report.degenerate = True
            raise DegenerateRegistration("solver diverged to a non-finite pose", report)

        if np.linalg.norm(step) < schedule.update_tolerance and not schedule.in_coarse_phase(n):
            report.converged = True
            break

    spread = normal_spread_deg(targets.normals[tgt])
    if spread <= schedule.degenerate_spread_deg:
        report.degenerate = True
        raise DegenerateRegistration(
            "all constraint normals within {:.1f} deg of one direction".format(spread), report)

    logger.debug("registration: {} outer / {} inner iterations, cost {:.4g}, {} correspondences".format(
        report.iterations, report.inner_iterations, report.final_cost, report.n_correspondences))

    return Pose2.from_array(pose), report
