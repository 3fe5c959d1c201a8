""" Per-scan odometry pipeline: filter, compensate, extract, register against the keyframe queue. """
import logging
import time
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from polar_odom.datasets.polar import RangeMeta
from polar_odom.errors import ConfigError, DegenerateRegistration
from polar_odom.models.core import Pose2, Velocity2, se2_exp, se2_log
from polar_odom.models.features import FeatureConfig, compute_surface_points, motion_compensate
from polar_odom.models.filtering import FilterConfig, k_strongest
from polar_odom.models.hash_grid import HashGrid
from polar_odom.models.registration import RegistrationConfig, RegistrationTargets, SolveReport, solve

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class OdometryConfig:
    name: str = "custom"
    filter: FilterConfig = FilterConfig()
    features: FeatureConfig = FeatureConfig()
    registration: RegistrationConfig = RegistrationConfig()
    scan: RangeMeta = RangeMeta()
    keyframe_distance: float = 1.5
    keyframe_capacity: int = 4
    compensation_refinements: int = 3
    compensation_tolerance: float = 0.1

    def __post_init__(self):
        if not self.keyframe_distance >= 0:
            raise ConfigError("odom.keyframe_distance must be non-negative, got {}".format(self.keyframe_distance))
        if int(self.keyframe_capacity) != self.keyframe_capacity or self.keyframe_capacity < 1:
            raise ConfigError("odom.keyframe_capacity must be a positive integer, got {}".format(
                self.keyframe_capacity))
        if int(self.compensation_refinements) != self.compensation_refinements or self.compensation_refinements < 0:
            raise ConfigError("odom.compensation_refinements must be a non-negative integer, got {}".format(
                self.compensation_refinements))
        if not self.compensation_tolerance > 0:
            raise ConfigError("odom.compensation_tolerance must be positive, got {}".format(self.compensation_tolerance))

    @property
    def ctf_enabled(self):
        return self.registration.ctf_enabled

    def schedule(self):
        return self.registration.schedule(self.features.resolution)


@dataclass(frozen=True, eq=False)
class Keyframe:
    pose: Pose2
    set: object
    grid: HashGrid
    scan_id: int


class KeyframeQueue:
    """ Fixed-capacity queue, newest first; pushing onto a full queue evicts the oldest keyframe. """

    def __init__(self, capacity):
        if capacity < 1:
            raise ValueError("capacity must be >= 1, got {}".format(capacity))
        self.capacity = int(capacity)
        self._entries = deque(maxlen=self.capacity)

    def push(self, keyframe):
        evicted = self._entries[-1] if len(self._entries) == self.capacity else None
        self._entries.appendleft(keyframe)
        return evicted

    @property
    def newest(self):
        return self._entries[0] if self._entries else None

    def __len__(self):
        return len(self._entries)

    def __iter__(self):
        return iter(self._entries)

    def entries(self):
        return list(self._entries)


def constant_velocity_prior(prev, prev_prev, dt_prev, dt_now):
    """ Extrapolate the last relative motion: prev ∘ exp(log(prev_prev^-1 ∘ prev) * dt_now / dt_prev). """
    if not dt_prev > 0:
        raise ValueError("dt_prev must be positive, got {}".format(dt_prev))
    xi = se2_log(prev_prev.inverse().compose(prev))
    return prev.compose(se2_exp(xi * (dt_now / dt_prev)))


@dataclass
class StageTimings:
    filter: float = 0.0
    features: float = 0.0
    registration: float = 0.0

    @property
    def total(self):
        return self.filter + self.features + self.registration


@dataclass
class OdometryUpdate:
    scan_id: int
    timestamp: float
    pose: Pose2
    timings: StageTimings
    report: SolveReport = None
    degenerate: bool = False
    keyframe_created: bool = False
    n_filtered: int = 0
    n_surface_points: int = 0
    prior: Pose2 = None
    compensation_passes: int = 1


@dataclass
class _History:
    poses: list = field(default_factory=list)
    times: list = field(default_factory=list)


class RadarOdometry:
    """ Incremental odometry. Holds only past scans' results, so it never looks ahead. """

    def __init__(self, config):
        self.config = config
        self.schedule = config.schedule()
        self.keyframes = KeyframeQueue(config.keyframe_capacity)
        self._targets = None
        self._history = _History()
        self._twist = Velocity2.zero()

    @property
    def n_processed(self):
        return len(self._history.poses)

    def _predict(self, t_now):
        poses, times = self._history.poses, self._history.times
        if not poses:
            return Pose2.identity()
        if len(poses) == 1:
            return poses[-1]
        return constant_velocity_prior(poses[-1], poses[-2], times[-1] - times[-2], t_now - times[-1])

    def _add_keyframe(self, pose, current, scan_id):
        kf_set = replace(current, frame_pose=pose)
        keyframe = Keyframe(pose=pose, set=kf_set, grid=HashGrid(self.schedule.cell_size, kf_set.means), scan_id=scan_id)
        evicted = self.keyframes.push(keyframe)
        self._targets = RegistrationTargets(self.keyframes.entries(), self.schedule.cell_size)
        logger.debug("scan {}: new keyframe ({} surface points){}".format(
            scan_id, len(kf_set), ", evicted scan {}".format(evicted.scan_id) if evicted else ""))

    def _extract(self, filtered, twist, t_ref):
        compensated = motion_compensate(filtered, twist, t_ref)
        return compute_surface_points(compensated, self.config.features.resolution, self.config.features.n_min)

    def _implied_twist(self, pose, t_ref):
        prev, t_prev = self._history.poses[-1], self._history.times[-1]
        return Velocity2.from_relative_pose(prev.inverse().compose(pose), t_ref - t_prev)

    def _refine(self, filtered, t_ref, twist, pose, report, current):
        """ Re-compensate with the twist the solved pose implies and register again, until the two agree.

        Agreement is measured as the largest displacement the twist change causes over the
        sweep. A degenerate re-solve keeps the last good result.

        """
        cfg = self.config
        passes = 1
        if not self._history.poses or not t_ref > self._history.times[-1] or len(filtered) == 0:
            return pose, report, current, passes

        span = float(np.ptp(filtered.times))
        reach = float(np.max(np.hypot(filtered.positions[:, 0], filtered.positions[:, 1])))

        for _ in range(cfg.compensation_refinements):
            implied = self._implied_twist(pose, t_ref)
            dv = implied.as_array() - twist.as_array()
            skew = 0.5 * span * (np.hypot(dv[0], dv[1]) + reach * abs(dv[2]))
            if skew < cfg.compensation_tolerance:
                break

            refined = self._extract(filtered, implied, t_ref)
            try:
                pose, report = solve(cfg.registration.metric, self.schedule, self._targets, refined, pose)
            except DegenerateRegistration:
                break
            twist, current = implied, refined
            passes += 1

        return pose, report, current, passes

    def _needs_keyframe(self, pose, current):
        newest = self.keyframes.newest
        if newest is None:
            return True
        if len(current) == 0:
            return False
        # a queue without surface points can never register anything
        if len(newest.set) == 0 or len(self._targets.means) == 0:
            return True
        return pose.distance_to(newest.pose) >= self.config.keyframe_distance

    def process_scan(self, scan):
        cfg = self.config
        timings = StageTimings()

        start = time.perf_counter()
        filtered = k_strongest(scan, cfg.filter)
        after_filter = time.perf_counter()
        timings.filter = after_filter - start

        t_ref = scan.reference_time
        twist = self._twist if cfg.features.compensate else Velocity2.zero()
        current = self._extract(filtered, twist, t_ref)
        after_features = time.perf_counter()
        timings.features = after_features - after_filter

        prior = self._predict(t_ref)
        report = None
        degenerate = False
        passes = 1

        if self._targets is None:
            pose = prior
        else:
            try:
                pose, report = solve(cfg.registration.metric, self.schedule, self._targets, current, prior)
            except DegenerateRegistration as e:
                logger.warning("scan {}: degenerate registration ({}), using constant-velocity prediction".format(
                    scan.scan_id, e))
                pose = prior
                report = e.report or SolveReport(degenerate=True)
                report.degenerate = True
                degenerate = True

            if not degenerate and cfg.features.compensate:
                pose, report, current, passes = self._refine(filtered, t_ref, twist, pose, report, current)
                if passes > 1:
                    logger.debug("scan {}: motion compensation refined {} times".format(scan.scan_id, passes - 1))
        timings.registration = time.perf_counter() - after_features

        if self._history.poses and t_ref > self._history.times[-1]:
            self._twist = self._implied_twist(pose, t_ref)
        self._history.poses.append(pose)
        self._history.times.append(t_ref)

        keyframe_created = self._needs_keyframe(pose, current)
        if keyframe_created:
            self._add_keyframe(pose, current, scan.scan_id)

        return OdometryUpdate(
            scan_id=scan.scan_id, timestamp=t_ref, pose=pose, timings=timings, report=report,
            degenerate=degenerate, keyframe_created=keyframe_created,
            n_filtered=len(filtered), n_surface_points=len(current), prior=prior, compensation_passes=passes)


def process_scan(state, scan):
    return state.process_scan(scan)


def run_sequence(scans, config):
    """ Run the pipeline over `scans` in order. Returns (updates, timestamps (N,), poses (N, 3)). """
    odometry = RadarOdometry(config)
    updates = [odometry.process_scan(scan) for scan in scans]
    timestamps = np.array([u.timestamp for u in updates])
    poses = np.array([u.pose.as_array() for u in updates]).reshape(-1, 3)
    return updates, timestamps, poses
