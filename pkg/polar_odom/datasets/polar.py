""" Polar radar sweeps: the PolarScan value and its file formats.

Two formats are supported.

Polar image (8-bit grayscale, one row per azimuth):
    columns 0-7   little-endian u64 timestamp in nanoseconds
    columns 8-9   little-endian u16 azimuth in units of 2*pi/65536 rad
    columns 10-   intensity bins
Range resolution and offset are not part of the image; they come from a
RangeMeta (usually read from a sidecar YAML file).

Portable CSV:
    range_resolution=<f>
    range_offset=<f>
    scan_id=<u>
    [intensity_scale=<f>]
    t_sec,azimuth_rad,i_0,i_1,...      (one line per azimuth)

"""
import logging
import os
from dataclasses import dataclass

import imageio.v2 as imageio
import numpy as np
import yaml

from polar_odom.errors import EmptyScan, InvalidScan, MalformedRow, NonMonotoneTimestamps, ParseError

logger = logging.getLogger(__name__)

HEADER_COLS = 10
AZIMUTH_UNITS = 65536
MAX_SWEEP_SECONDS = 0.5
BYTE_SCALE = 255.0

_CSV_HEADER_KEYS = ("range_resolution", "range_offset", "scan_id")


@dataclass(frozen=True)
class RangeMeta:
    """ Range geometry of a sensor. `range_offset` is the distance to the center of bin 0.

    `frame_period` is the time between sweep starts. It places sweeps without azimuth
    timestamps on a common clock and defaults to `sweep_duration`.

    """
    range_resolution: float = 0.0596
    range_offset: float = 0.0
    sweep_duration: float = 0.25
    n_bins: int = None
    frame_period: float = None

    def __post_init__(self):
        if not self.range_resolution > 0:
            raise InvalidScan("range_resolution must be positive, got {}".format(self.range_resolution))
        if not self.range_offset >= 0:
            raise InvalidScan("range_offset must be non-negative, got {}".format(self.range_offset))
        if not 0 < self.sweep_duration < MAX_SWEEP_SECONDS:
            raise InvalidScan("sweep_duration must be in (0, {}), got {}".format(MAX_SWEEP_SECONDS, self.sweep_duration))
        if self.frame_period is not None and not self.frame_period >= self.sweep_duration:
            raise InvalidScan("frame_period {} is shorter than sweep_duration {}".format(
                self.frame_period, self.sweep_duration))

    @property
    def sweep_period(self):
        return self.frame_period if self.frame_period is not None else self.sweep_duration

    @classmethod
    def from_sidecar(cls, path):
        with open(path, "r") as f:
            data = yaml.safe_load(f) or {}
        if "scan" in data and isinstance(data["scan"], dict):
            data = data["scan"]
        known = {k: data[k] for k in ("range_resolution", "range_offset", "sweep_duration", "n_bins", "frame_period")
                 if k in data}
        return cls(**known)

    def bin_ranges(self, n_bins):
        """ Range in meters of the center of every bin. """
        return self.range_offset + (np.arange(n_bins) + 0.5) * self.range_resolution


@dataclass(frozen=True, eq=False)
class PolarScan:
    intensities: np.ndarray
    azimuth_angles: np.ndarray
    azimuth_times: np.ndarray
    range_resolution: float
    range_offset: float = 0.0
    scan_id: int = 0

    def __post_init__(self):
        Z = np.array(self.intensities, dtype=float)
        angles = np.array(self.azimuth_angles, dtype=float).reshape(-1)
        times = np.array(self.azimuth_times, dtype=float).reshape(-1)

        if Z.ndim != 2 or Z.shape[0] < 1 or Z.shape[1] < 1:
            raise EmptyScan("intensity matrix must be N_a x N_r with both >= 1, got shape {}".format(Z.shape))
        n_azimuths = Z.shape[0]
        if angles.shape[0] != n_azimuths or times.shape[0] != n_azimuths:
            raise InvalidScan(
                "expected {} azimuth angles and times, got {} and {}".format(
                    n_azimuths, angles.shape[0], times.shape[0]))
        if not np.all(np.isfinite(Z)) or np.any(Z < 0):
            raise InvalidScan("intensities must be finite and non-negative")
        if not np.all(np.isfinite(angles)) or np.any(angles < 0) or np.any(angles >= 2 * np.pi):
            raise InvalidScan("azimuth angles must lie in [0, 2*pi)")
        if np.any(np.diff(angles) <= 0):
            raise InvalidScan("azimuth angles must be strictly increasing")
        if not np.all(np.isfinite(times)):
            raise InvalidScan("azimuth timestamps must be finite")
        if np.any(np.diff(times) < 0):
            raise NonMonotoneTimestamps("azimuth timestamps decrease within the sweep")
        if times[-1] - times[0] >= MAX_SWEEP_SECONDS:
            raise InvalidScan("sweep spans {:.3f} s, more than one revolution".format(times[-1] - times[0]))
        if not self.range_resolution > 0 or not self.range_offset >= 0:
            raise InvalidScan("invalid range metadata ({}, {})".format(self.range_resolution, self.range_offset))

        for arr in (Z, angles, times):
            arr.setflags(write=False)

        object.__setattr__(self, "intensities", Z)
        object.__setattr__(self, "azimuth_angles", angles)
        object.__setattr__(self, "azimuth_times", times)
        object.__setattr__(self, "range_resolution", float(self.range_resolution))
        object.__setattr__(self, "range_offset", float(self.range_offset))
        object.__setattr__(self, "scan_id", int(self.scan_id))

    @property
    def n_azimuths(self):
        return self.intensities.shape[0]

    @property
    def n_bins(self):
        return self.intensities.shape[1]

    @property
    def meta(self):
        return RangeMeta(range_resolution=self.range_resolution, range_offset=self.range_offset, n_bins=self.n_bins)

    @property
    def reference_time(self):
        """ Timestamp of the middle azimuth; every per-scan pose refers to this instant. """
        return float(self.azimuth_times[self.n_azimuths // 2])

    def bin_ranges(self):
        return self.meta.bin_ranges(self.n_bins)

    def __eq__(self, other):
        if not isinstance(other, PolarScan):
            return NotImplemented
        return (
            self.scan_id == other.scan_id
            and self.range_resolution == other.range_resolution
            and self.range_offset == other.range_offset
            and np.array_equal(self.intensities, other.intensities)
            and np.array_equal(self.azimuth_angles, other.azimuth_angles)
            and np.array_equal(self.azimuth_times, other.azimuth_times)
        )


def synthesize_azimuth_times(n_azimuths, t0, sweep_duration):
    """ Evenly spread azimuth timestamps over one sweep, for sources that lack them. """
    return t0 + np.arange(n_azimuths) * (sweep_duration / n_azimuths)


def _sorted_by_angle(Z, angles, times):
    order = np.argsort(angles, kind="stable")
    return Z[order], angles[order], times[order]


def load_polar_image(path, meta, scan_id=None):
    """ Read a polar image whose rows each carry a timestamp/azimuth header followed by intensities. """
    image = np.asarray(imageio.imread(path))
    if image.ndim == 3:
        image = image[..., 0]
    if image.ndim != 2 or image.shape[0] == 0:
        raise EmptyScan("{} holds no azimuth rows".format(path))
    if image.dtype != np.uint8:
        raise InvalidScan("{}: expected 8-bit grayscale, got {}".format(path, image.dtype))

    n_rows, width = image.shape
    if width <= HEADER_COLS:
        raise MalformedRow("{}: rows are {} bytes wide, header alone takes {}".format(path, width, HEADER_COLS))
    if meta.n_bins is not None and width - HEADER_COLS != meta.n_bins:
        raise MalformedRow("{}: expected {} range bins, found {}".format(path, meta.n_bins, width - HEADER_COLS))

    header = np.ascontiguousarray(image[:, :HEADER_COLS])
    stamps_ns = header[:, :8].copy().view("<u8").reshape(-1)
    azimuth_codes = header[:, 8:10].copy().view("<u2").reshape(-1)

    angles = azimuth_codes.astype(float) * (2 * np.pi / AZIMUTH_UNITS)

    if scan_id is None:
        scan_id = _scan_id_from_name(path)

    if np.all(stamps_ns == 0):
        t0 = scan_id * meta.sweep_period
        logger.debug("{}: no azimuth timestamps, spreading them over [{}, {}) s".format(
            path, t0, t0 + meta.sweep_duration))
        times = synthesize_azimuth_times(n_rows, t0, meta.sweep_duration)
    else:
        times = stamps_ns.astype(np.float64) * 1e-9

    Z = image[:, HEADER_COLS:].astype(float) / BYTE_SCALE
    Z, angles, times = _sorted_by_angle(Z, angles, times)

    return PolarScan(
        intensities=Z, azimuth_angles=angles, azimuth_times=times,
        range_resolution=meta.range_resolution, range_offset=meta.range_offset, scan_id=scan_id)


def write_polar_image(path, scan, t0_ns=0):
    """ Inverse of load_polar_image for scans whose intensities are 8-bit quantized. """
    n_azimuths = scan.n_azimuths
    image = np.zeros((n_azimuths, HEADER_COLS + scan.n_bins), dtype=np.uint8)

    stamps = (t0_ns + np.rint(scan.azimuth_times * 1e9)).astype("<u8")
    codes = np.rint(scan.azimuth_angles * AZIMUTH_UNITS / (2 * np.pi)).astype(np.int64) % AZIMUTH_UNITS
    image[:, :8] = stamps.view(np.uint8).reshape(n_azimuths, 8)
    image[:, 8:10] = codes.astype("<u2").view(np.uint8).reshape(n_azimuths, 2)
    image[:, HEADER_COLS:] = np.clip(np.rint(scan.intensities * BYTE_SCALE), 0, 255).astype(np.uint8)

    imageio.imwrite(path, image)


def _scan_id_from_name(path):
    stem = os.path.splitext(os.path.basename(path))[0]
    digits = "".join(ch for ch in stem if ch.isdigit())
    return int(digits[-9:]) if digits else 0


def _parse_float(text, line_no, what):
    try:
        value = float(text)
    except ValueError:
        raise ParseError("cannot parse {} from {!r}".format(what, text), line_no)
    return value


def load_polar_csv(path):
    header = {}
    rows = []
    n_columns = None

    with open(path, "r") as f:
        for line_no, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue

            if "=" in line:
                if rows:
                    raise ParseError("header line after data rows", line_no)
                key, _, value = line.partition("=")
                key = key.strip()
                if key == "scan_id":
                    try:
                        header[key] = int(value)
                    except ValueError:
                        raise ParseError("cannot parse scan_id from {!r}".format(value), line_no)
                else:
                    header[key] = _parse_float(value, line_no, key)
                continue

            fields = line.split(",")
            if len(fields) < 3:
                raise MalformedRow("line {}: row has {} fields, need timestamp, azimuth and >= 1 bin".format(
                    line_no, len(fields)))
            if n_columns is None:
                n_columns = len(fields)
            elif len(fields) != n_columns:
                raise ParseError("row has {} fields, expected {}".format(len(fields), n_columns), line_no)
            try:
                rows.append(np.array(fields, dtype=float))
            except ValueError:
                raise ParseError("non-numeric field in row", line_no)

    missing = [k for k in _CSV_HEADER_KEYS if k not in header]
    if missing:
        raise ParseError("missing header key(s): {}".format(", ".join(missing)))
    if not rows:
        raise EmptyScan("{} holds no azimuth rows".format(path))

    data = np.stack(rows)
    scale = header.get("intensity_scale", 1.0)
    if not scale > 0:
        raise ParseError("intensity_scale must be positive, got {}".format(scale))

    Z = data[:, 2:] / scale if scale != 1.0 else data[:, 2:]
    Z, angles, times = _sorted_by_angle(Z, data[:, 1], data[:, 0])

    return PolarScan(
        intensities=Z, azimuth_angles=angles, azimuth_times=times,
        range_resolution=header["range_resolution"], range_offset=header["range_offset"],
        scan_id=header["scan_id"])


def write_polar_csv(path, scan):
    """ Lossless writer. 8-bit quantized scans are written as integers with intensity_scale=255. """
    Z = scan.intensities
    counts = np.rint(Z * BYTE_SCALE)
    quantized = np.array_equal(counts / BYTE_SCALE, Z)

    lines = [
        "range_resolution={!r}".format(scan.range_resolution),
        "range_offset={!r}".format(scan.range_offset),
        "scan_id={}".format(scan.scan_id),
    ]
    if quantized:
        lines.append("intensity_scale={!r}".format(BYTE_SCALE))
        counts = counts.astype(np.int64)

    for i in range(scan.n_azimuths):
        prefix = "{!r},{!r},".format(float(scan.azimuth_times[i]), float(scan.azimuth_angles[i]))
        if quantized:
            body = ",".join(map(str, counts[i].tolist()))
        else:
            body = ",".join(map(repr, Z[i].tolist()))
        lines.append(prefix + body)

    with open(path, "w") as f:
        f.write("\n".join(lines))
        f.write("\n")
