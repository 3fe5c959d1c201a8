""" Stage-one filtering: the k strongest returns per azimuth above an intensity threshold. """
from dataclasses import dataclass, replace

import numpy as np

from polar_odom.errors import ConfigError


@dataclass(frozen=True)
class FilterConfig:
    k: int = 12
    z_min: float = 60.0 / 255.0
    r_min: float = 2.5

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 1:
            raise ConfigError("filter.k must be a positive integer, got {}".format(self.k))
        if not 0.0 <= self.z_min < 1.0:
            raise ConfigError("filter.z_min must be in [0, 1), got {}".format(self.z_min))
        if not self.r_min >= 0:
            raise ConfigError("filter.r_min must be non-negative, got {}".format(self.r_min))


@dataclass(frozen=True)
class FilteredPoint:
    position: np.ndarray
    intensity: float
    time: float
    azimuth_index: int


@dataclass(frozen=True, eq=False)
class FilteredPoints:
    """ Column-wise storage of filtered returns; indexing yields a FilteredPoint. """
    positions: np.ndarray
    intensities: np.ndarray
    times: np.ndarray
    azimuth_indices: np.ndarray
    range_bins: np.ndarray = None

    def __post_init__(self):
        n = len(self.intensities)
        if self.range_bins is None:
            object.__setattr__(self, "range_bins", np.full(n, -1, dtype=np.int64))
        positions = np.asarray(self.positions, dtype=float).reshape(n, 2)
        object.__setattr__(self, "positions", positions)

    @classmethod
    def empty(cls):
        return cls(
            positions=np.zeros((0, 2)), intensities=np.zeros(0), times=np.zeros(0),
            azimuth_indices=np.zeros(0, dtype=np.int64), range_bins=np.zeros(0, dtype=np.int64))

    def __len__(self):
        return len(self.intensities)

    def __getitem__(self, i):
        return FilteredPoint(
            position=self.positions[i], intensity=float(self.intensities[i]),
            time=float(self.times[i]), azimuth_index=int(self.azimuth_indices[i]))

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def with_positions(self, positions):
        return replace(self, positions=positions)

    def translated(self, offset):
        return self.with_positions(self.positions + np.asarray(offset, dtype=float))


def polar_to_cartesian(azimuth, range_bin, meta):
    """ Bin-center convention: r = range_offset + (bin + 0.5) * range_resolution. """
    r = meta.range_offset + (np.asarray(range_bin) + 0.5) * meta.range_resolution
    return np.stack([r * np.cos(azimuth), r * np.sin(azimuth)], axis=-1)


def k_strongest(scan, cfg):
    """ Keep, per azimuth, the `cfg.k` strongest returns with intensity > z_min and range >= r_min.

    Output is azimuth-major, then by descending intensity, then by ascending range bin.
    Each row is cut to its k-th largest value with a partial selection first, so only the
    candidates (k plus ties at the cut) are ever sorted.

    """
    Z = scan.intensities
    ranges = scan.bin_ranges()

    first_bin = int(np.searchsorted(ranges, cfg.r_min, side="left"))
    if first_bin >= scan.n_bins:
        return FilteredPoints.empty()

    window = Z[:, first_bin:]
    passing = window > cfg.z_min
    width = window.shape[1]
    if cfg.k < width:
        masked = np.where(passing, window, -np.inf)
        cut = np.partition(masked, width - cfg.k, axis=1)[:, width - cfg.k]
        passing &= masked >= cut[:, None]

    rows, cols = np.nonzero(passing)
    if rows.size == 0:
        return FilteredPoints.empty()
    cols = cols + first_bin
    values = Z[rows, cols]

    # candidates ranked within their row by (-intensity, bin)
    order = np.lexsort((cols, -values, rows))
    rows, cols, values = rows[order], cols[order], values[order]

    row_start = np.searchsorted(rows, rows, side="left")
    rank = np.arange(rows.size) - row_start
    keep = rank < cfg.k
    rows, cols, values = rows[keep], cols[keep], values[keep]

    azimuths = scan.azimuth_angles[rows]
    positions = polar_to_cartesian(azimuths, cols, scan.meta)

    return FilteredPoints(
        positions=positions, intensities=values, times=scan.azimuth_times[rows],
        azimuth_indices=rows.astype(np.int64), range_bins=cols.astype(np.int64))
