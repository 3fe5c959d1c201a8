""" Synthetic spinning-radar sweeps of a 2D landmark world along a known path.

Every azimuth is fired from the platform pose at its own timestamp, so sweeps
taken while moving carry the same distortion a real sensor produces. Returns are
Gaussian range responses scaled by reflectivity and a 1/r falloff, on top of a
half-normal noise floor, quantized to 8 bits.

"""
import logging
from dataclasses import dataclass

import numpy as np

from polar_odom.datasets.polar import PolarScan, synthesize_azimuth_times
from polar_odom.errors import ConfigError, ParseError
from polar_odom.evaluation import Trajectory
from polar_odom.models.core import Pose2, compose_poses, exp_batch, wrap_angle

logger = logging.getLogger(__name__)

_PARALLEL_EPS = 1e-12
_WINDOW_SIGMAS = 5.0


@dataclass(frozen=True, eq=False)
class World:
    """ Line segments (S, 4) as x1 y1 x2 y2 and point reflectors (P, 2), each with a reflectivity in (0, 1]. """
    segments: np.ndarray = None
    segment_reflectivity: np.ndarray = None
    points: np.ndarray = None
    point_reflectivity: np.ndarray = None

    def __post_init__(self):
        seg = np.zeros((0, 4)) if self.segments is None else np.array(self.segments, dtype=float).reshape(-1, 4)
        pts = np.zeros((0, 2)) if self.points is None else np.array(self.points, dtype=float).reshape(-1, 2)
        seg_r = np.ones(len(seg)) if self.segment_reflectivity is None else np.array(
            self.segment_reflectivity, dtype=float).reshape(-1)
        pts_r = np.ones(len(pts)) if self.point_reflectivity is None else np.array(
            self.point_reflectivity, dtype=float).reshape(-1)

        if seg_r.shape[0] != seg.shape[0] or pts_r.shape[0] != pts.shape[0]:
            raise ValueError("one reflectivity per segment and per point is required")
        if not (np.all(np.isfinite(seg)) and np.all(np.isfinite(pts))):
            raise ValueError("world geometry must be finite")
        refl = np.concatenate([seg_r, pts_r])
        if np.any(~(refl > 0)) or np.any(refl > 1):
            raise ValueError("reflectivities must lie in (0, 1]")

        object.__setattr__(self, "segments", seg)
        object.__setattr__(self, "segment_reflectivity", seg_r)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "point_reflectivity", pts_r)

    def __len__(self):
        return self.segments.shape[0] + self.points.shape[0]

    @property
    def bounds(self):
        """ (xmin, ymin, xmax, ymax), or None for an empty world. """
        xy = np.concatenate([self.segments[:, :2], self.segments[:, 2:], self.points])
        if xy.shape[0] == 0:
            return None
        return tuple(float(v) for v in np.concatenate([xy.min(axis=0), xy.max(axis=0)]))

    def merged(self, other):
        return World(
            np.concatenate([self.segments, other.segments]),
            np.concatenate([self.segment_reflectivity, other.segment_reflectivity]),
            np.concatenate([self.points, other.points]),
            np.concatenate([self.point_reflectivity, other.point_reflectivity]))


def load_world(path):
    segments, seg_r, points, pts_r = [], [], [], []
    with open(path, "r") as f:
        for line_no, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            kind, *values = line.split()
            try:
                values = [float(v) for v in values]
            except ValueError:
                raise ParseError("non-numeric value in {!r} line".format(kind), line_no)

            if kind == "seg" and len(values) == 5:
                segments.append(values[:4])
                seg_r.append(values[4])
            elif kind == "pt" and len(values) == 3:
                points.append(values[:2])
                pts_r.append(values[2])
            else:
                raise ParseError("expected 'seg x1 y1 x2 y2 refl' or 'pt x y refl'", line_no)

            if not 0 < values[-1] <= 1:
                raise ParseError("reflectivity {} outside (0, 1]".format(values[-1]), line_no)

    if not segments and not points:
        raise ParseError("{} holds no reflectors".format(path))
    return World(segments, seg_r, points, pts_r)


def write_world(path, world):
    with open(path, "w") as f:
        for (x1, y1, x2, y2), r in zip(world.segments.tolist(), world.segment_reflectivity.tolist()):
            f.write("seg {!r} {!r} {!r} {!r} {!r}\n".format(x1, y1, x2, y2, r))
        for (x, y), r in zip(world.points.tolist(), world.point_reflectivity.tolist()):
            f.write("pt {!r} {!r} {!r}\n".format(x, y, r))


@dataclass(frozen=True)
class SimConfig:
    n_azimuths: int = 400
    n_bins: int = 1000
    range_resolution: float = 0.0596
    range_offset: float = 0.0
    sweep_duration: float = 0.25
    noise_floor: float = 0.03
    beam_width: float = 0.02
    falloff_range: float = 30.0
    range_sigma_bins: float = 1.5
    rng_seed: int = 0

    def __post_init__(self):
        for name in ("n_azimuths", "n_bins"):
            if int(getattr(self, name)) != getattr(self, name) or getattr(self, name) < 1:
                raise ConfigError("sim.{} must be a positive integer".format(name))
        for name in ("range_resolution", "sweep_duration", "beam_width", "falloff_range", "range_sigma_bins"):
            if not getattr(self, name) > 0:
                raise ConfigError("sim.{} must be positive, got {}".format(name, getattr(self, name)))
        if not self.noise_floor >= 0 or not self.range_offset >= 0:
            raise ConfigError("sim.noise_floor and sim.range_offset must be non-negative")

    @property
    def max_range(self):
        return self.range_offset + self.n_bins * self.range_resolution


# --- trajectories ---

class PathTrajectory:
    """ Constant-speed motion along a chain of straight and constant-curvature primitives.

    Primitives are (length, curvature) pairs; curvature 0 is a straight line and a
    positive curvature turns left. Past the end of the chain the platform stands still.

    """
    def __init__(self, primitives, speed, start=None):
        self.primitives = [(float(length), float(curvature)) for length, curvature in primitives]
        if any(length < 0 for length, _ in self.primitives):
            raise ValueError("primitive lengths must be non-negative")
        if not speed >= 0:
            raise ValueError("speed must be non-negative, got {}".format(speed))

        self.speed = float(speed)
        self.start = start or Pose2()

        lengths = np.array([p[0] for p in self.primitives], dtype=float)
        self._curvatures = np.array([p[1] for p in self.primitives], dtype=float)
        self._offsets = np.concatenate([[0.0], np.cumsum(lengths)])
        starts = [self.start.as_array()]
        for length, curvature in self.primitives:
            step = exp_batch(np.array([[length, 0.0, curvature * length]]))[0]
            starts.append(compose_poses(starts[-1], step))
        self._starts = np.array(starts)

    @classmethod
    def from_spec(cls, spec, speed, start=None):
        """ [("straight", length), ("arc", radius, angle_deg), ...]; a negative angle turns right. """
        primitives = []
        for item in spec:
            kind = item[0]
            if kind == "straight":
                primitives.append((item[1], 0.0))
            elif kind == "arc":
                radius, angle = float(item[1]), np.radians(float(item[2]))
                primitives.append((radius * abs(angle), np.sign(angle) / radius))
            else:
                raise ValueError("unknown path primitive {!r}".format(kind))
        return cls(primitives, speed, start)

    @property
    def length(self):
        return float(self._offsets[-1])

    @property
    def duration(self):
        return self.length / self.speed if self.speed > 0 else 0.0

    def poses_at_distance(self, s):
        s = np.clip(np.atleast_1d(np.asarray(s, dtype=float)), 0.0, self.length)
        if not self.primitives:
            return np.repeat(self._starts[:1], s.shape[0], axis=0)
        idx = np.clip(np.searchsorted(self._offsets, s, side="right") - 1, 0, len(self.primitives) - 1)
        u = s - self._offsets[idx]
        local = exp_batch(np.stack([u, np.zeros_like(u), self._curvatures[idx] * u], axis=1))
        return compose_poses(self._starts[idx], local)

    def poses(self, times):
        return self.poses_at_distance(self.speed * np.asarray(times, dtype=float))

    def __call__(self, t):
        return Pose2.from_array(self.poses([t])[0])


def _poses_of(trajectory, times):
    if hasattr(trajectory, "poses"):
        return np.asarray(trajectory.poses(times), dtype=float).reshape(-1, 3)
    return np.array([trajectory(t).as_array() for t in times])


# --- sweeps ---

def _cross(ax, ay, bx, by):
    return ax * by - ay * bx


def _segment_hits(world, origins, directions, cfg):
    """ Range to the nearest segment along every ray (inf where nothing is hit). """
    n = origins.shape[0]
    if world.segments.shape[0] == 0:
        return np.full(n, np.inf), np.zeros(n)

    p = world.segments[:, :2]
    e = world.segments[:, 2:] - p
    dx, dy = directions[:, 0:1], directions[:, 1:2]
    wx = p[None, :, 0] - origins[:, 0:1]
    wy = p[None, :, 1] - origins[:, 1:2]

    denom = _cross(dx, dy, e[None, :, 0], e[None, :, 1])
    parallel = np.abs(denom) < _PARALLEL_EPS
    safe = np.where(parallel, 1.0, denom)
    r = _cross(wx, wy, e[None, :, 0], e[None, :, 1]) / safe
    s = _cross(wx, wy, dx, dy) / safe

    valid = ~parallel & (r > 0) & (s >= 0) & (s <= 1) & (r < cfg.max_range)
    r = np.where(valid, r, np.inf)
    nearest = np.argmin(r, axis=1)
    ranges = r[np.arange(n), nearest]
    refl = np.where(np.isfinite(ranges), world.segment_reflectivity[nearest], 0.0)
    return ranges, refl


def _point_hits(world, origins, headings, wall_ranges, cfg):
    """ (azimuth index, range, amplitude factor) of every point reflector inside a beam. """
    if world.points.shape[0] == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0), np.zeros(0)

    rel_x = world.points[None, :, 0] - origins[:, 0:1]
    rel_y = world.points[None, :, 1] - origins[:, 1:2]
    r = np.hypot(rel_x, rel_y)
    off_axis = wrap_angle(np.arctan2(rel_y, rel_x) - headings[:, None])

    sigma = cfg.beam_width / 2.355
    inside = (np.abs(off_axis) <= 3.0 * sigma) & (r < wall_ranges[:, None]) & (r < cfg.max_range) & (r > 0)
    az, idx = np.nonzero(inside)
    gain = np.exp(-0.5 * (off_axis[az, idx] / sigma) ** 2) * world.point_reflectivity[idx]
    return az.astype(np.int64), r[az, idx], gain


def _deposit(Z, azimuths, ranges, amplitudes, cfg):
    if azimuths.size == 0:
        return
    u = (ranges - cfg.range_offset) / cfg.range_resolution - 0.5
    half = int(np.ceil(_WINDOW_SIGMAS * cfg.range_sigma_bins))
    window = np.arange(-half, half + 1)

    bins = np.rint(u).astype(np.int64)[:, None] + window[None, :]
    response = amplitudes[:, None] * np.exp(-0.5 * ((bins - u[:, None]) / cfg.range_sigma_bins) ** 2)
    rows = np.broadcast_to(azimuths[:, None], bins.shape)
    keep = (bins >= 0) & (bins < cfg.n_bins)
    np.add.at(Z, (rows[keep], bins[keep]), response[keep])


def simulate_sweep(world, trajectory, cfg, t0=0.0, scan_id=0, rng=None):
    """ One sweep starting at `t0`. `trajectory` has a `poses(times)` method or maps a time to a Pose2. """
    if rng is None:
        rng = np.random.default_rng([cfg.rng_seed, scan_id])

    angles = np.arange(cfg.n_azimuths) * (2 * np.pi / cfg.n_azimuths)
    times = synthesize_azimuth_times(cfg.n_azimuths, t0, cfg.sweep_duration)
    poses = _poses_of(trajectory, times)

    origins = poses[:, :2]
    headings = poses[:, 2] + angles
    directions = np.stack([np.cos(headings), np.sin(headings)], axis=1)

    wall_ranges, wall_refl = _segment_hits(world, origins, directions, cfg)
    pt_az, pt_ranges, pt_gain = _point_hits(world, origins, headings, wall_ranges, cfg)

    wall_az = np.nonzero(np.isfinite(wall_ranges))[0]
    azimuths = np.concatenate([wall_az, pt_az])
    ranges = np.concatenate([wall_ranges[wall_az], pt_ranges])
    gains = np.concatenate([wall_refl[wall_az], pt_gain])
    amplitudes = gains * np.minimum(1.0, cfg.falloff_range / np.maximum(ranges, 1e-9))

    Z = np.zeros((cfg.n_azimuths, cfg.n_bins))
    _deposit(Z, azimuths, ranges, amplitudes, cfg)
    if cfg.noise_floor > 0:
        Z += np.abs(rng.normal(0.0, cfg.noise_floor, size=Z.shape))
    Z = np.rint(np.clip(Z, 0.0, 1.0) * 255.0) / 255.0

    return PolarScan(
        intensities=Z, azimuth_angles=angles, azimuth_times=times,
        range_resolution=cfg.range_resolution, range_offset=cfg.range_offset, scan_id=scan_id)


def generate_sequence(world, trajectory, cfg, frame_rate, n_frames=None, t0=0.0):
    """ Sweeps at `frame_rate` Hz plus ground truth at each sweep's middle-azimuth time.

    Without `n_frames`, the sequence covers the trajectory's duration.

    """
    if not frame_rate > 0:
        raise ConfigError("frame_rate must be positive, got {}".format(frame_rate))
    if cfg.sweep_duration > 1.0 / frame_rate:
        raise ConfigError("sweep_duration {} s exceeds the frame period {} s".format(cfg.sweep_duration, 1.0 / frame_rate))

    if n_frames is None:
        duration = getattr(trajectory, "duration", 0.0)
        n_frames = int(np.floor(duration * frame_rate + 1e-9))
        if n_frames < 1:
            raise ConfigError("trajectory has zero duration; pass n_frames")

    scans = []
    for k in range(n_frames):
        scans.append(simulate_sweep(world, trajectory, cfg, t0=t0 + k / frame_rate, scan_id=k))
        if (k + 1) % 100 == 0:
            logger.debug("simulated {} / {} sweeps".format(k + 1, n_frames))

    stamps = np.array([scan.reference_time for scan in scans])
    ground_truth = Trajectory(stamps, _poses_of(trajectory, stamps))
    return scans, ground_truth


# --- worlds ---

def _min_distance_to_path(xy, path_xy):
    d = np.full(xy.shape[0], np.inf)
    for start in range(0, path_xy.shape[0], 512):
        block = path_xy[start:start + 512]
        diff = xy[:, None, :] - block[None, :, :]
        d = np.minimum(d, np.sqrt((diff ** 2).sum(axis=2)).min(axis=1))
    return d


def roadside_world(path, seed, spacing=4.0, lateral=(5.0, 14.0), clearance=3.0):
    """ Walls, kerbs and poles scattered along both sides of `path`.

    Objects are dropped every `spacing` meters (jittered) on each side, at a lateral offset
    drawn from `lateral`; anything closer than `clearance` to the path is discarded.

    """
    rng = np.random.default_rng(seed)
    n_stations = max(int(path.length / spacing), 1)
    stations = path.poses_at_distance(np.linspace(0.0, path.length, n_stations))
    path_xy = path.poses_at_distance(np.arange(0.0, path.length + 0.5, 0.5))[:, :2]

    segments, seg_r, points, pts_r = [], [], [], []
    for x, y, theta in stations:
        for side in (-1.0, 1.0):
            if rng.random() < 0.2:
                continue
            offset = rng.uniform(*lateral)
            along = rng.uniform(-0.5, 0.5) * spacing
            c, s = np.cos(theta), np.sin(theta)
            cx = x + c * along - s * side * offset
            cy = y + s * along + c * side * offset

            kind = rng.random()
            if kind < 0.45:
                # wall, roughly parallel to the road
                length = rng.uniform(3.0, 9.0)
                phi = theta + rng.normal(0.0, 0.25)
            elif kind < 0.7:
                # wall end or building corner, across the road direction
                length = rng.uniform(1.5, 4.0)
                phi = theta + np.pi / 2 + rng.normal(0.0, 0.25)
            else:
                points.append([cx, cy])
                pts_r.append(rng.uniform(0.6, 1.0))
                continue

            hx, hy = 0.5 * length * np.cos(phi), 0.5 * length * np.sin(phi)
            segments.append([cx - hx, cy - hy, cx + hx, cy + hy])
            seg_r.append(rng.uniform(0.5, 1.0))

    segments = np.array(segments, dtype=float).reshape(-1, 4)
    points = np.array(points, dtype=float).reshape(-1, 2)
    seg_r, pts_r = np.array(seg_r), np.array(pts_r)

    if segments.shape[0]:
        mid = 0.5 * (segments[:, :2] + segments[:, 2:])
        near = np.minimum.reduce([
            _min_distance_to_path(segments[:, :2], path_xy),
            _min_distance_to_path(segments[:, 2:], path_xy),
            _min_distance_to_path(mid, path_xy)])
        keep = near >= clearance
        segments, seg_r = segments[keep], seg_r[keep]
    if points.shape[0]:
        keep = _min_distance_to_path(points, path_xy) >= clearance
        points, pts_r = points[keep], pts_r[keep]

    return World(segments, seg_r, points, pts_r)


def inject_outliers(world, fraction, seed, margin=10.0):
    """ Add random point reflectors so that they make up `fraction` of all reflectors. """
    if not 0 <= fraction < 1:
        raise ValueError("fraction must lie in [0, 1), got {}".format(fraction))
    n_out = int(round(fraction * len(world) / (1.0 - fraction)))
    if n_out == 0 or world.bounds is None:
        return world

    rng = np.random.default_rng(seed)
    xmin, ymin, xmax, ymax = world.bounds
    xy = np.stack([
        rng.uniform(xmin - margin, xmax + margin, n_out),
        rng.uniform(ymin - margin, ymax + margin, n_out)], axis=1)
    refl = rng.uniform(0.4, 1.0, n_out)
    return world.merged(World(points=xy, point_reflectivity=refl))
