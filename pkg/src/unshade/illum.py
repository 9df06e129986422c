"""Light sources: ephemeris sun direction, sun/sky shading evaluation,
HDR sky-dome merging, fisheye-to-equirectangular projection, dome alignment.

Shading normalization: S_sky is scaled by 1/pi so an unoccluded, up-facing
surface under a unit uniform sky reads exactly 1; the sun term is the plain
clamped cosine gated by visibility. Both are dimensionless; the sun/sky
radiance constants only ever appear through their ratio.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np

from . import _kernels
from ._validation import check_positive, check_same_shape
from .image import BinaryMask, LinearImage, bilinear_sample
from .geometry import CameraModel, GeometryBuffers, TriangleMesh, shadow_bias

MIN_SKY_SAMPLES = 16
HDR_FLOOR = 0.02
HDR_SATURATION = 0.98


@dataclass(frozen=True)
class SunPosition:
    """Sun direction as azimuth (degrees clockwise from north), elevation
    (degrees above horizon), and the matching unit vector toward the sun in
    the ENU world frame."""

    azimuth: float
    elevation: float

    def __post_init__(self):
        if not -90.0 <= self.elevation <= 90.0:
            raise ValueError(f"elevation {self.elevation} out of [-90, 90]")

    @property
    def direction(self) -> np.ndarray:
        az = math.radians(self.azimuth)
        el = math.radians(self.elevation)
        return np.array([math.sin(az) * math.cos(el),
                         math.cos(az) * math.cos(el),
                         math.sin(el)])


@dataclass
class ShadingMaps:
    """Normalized per-pixel shading: s_sun in [0,1], s_sky >= 0, plus a
    validity mask. Both maps are zero wherever valid is false."""

    s_sun: np.ndarray   # (H, W) float32
    s_sky: np.ndarray   # (H, W) float32
    valid: BinaryMask

    def __post_init__(self):
        check_same_shape(self.s_sun, self.s_sky, self.valid.bits,
                         names=["s_sun", "s_sky", "valid"])
        keep = self.valid.bits
        self.s_sun = np.where(keep, self.s_sun, 0.0).astype(np.float32)
        self.s_sky = np.where(keep, self.s_sky, 0.0).astype(np.float32)


@dataclass
class SkyDome:
    """Luminance-only equirectangular radiance map: x spans azimuth 0-360
    degrees east of north, y spans elevation +90 (top row) to -90."""

    equirect: LinearImage
    gain: float | None = None

    def __post_init__(self):
        if self.equirect.channels != 1:
            raise ValueError("sky dome must be 1-channel luminance")

    @property
    def aligned(self) -> bool:
        return self.gain is not None


@dataclass
class ExposureStack:
    """Bracketed sensor-linear frames with strictly increasing exposure times."""

    frames: list[np.ndarray]          # each (H, W) float in [0, 1]
    exposure_times: np.ndarray        # seconds

    def __post_init__(self):
        self.exposure_times = np.asarray(self.exposure_times, dtype=np.float64)
        if len(self.frames) < 2:
            raise ValueError("an exposure stack needs at least 2 frames")
        if len(self.frames) != len(self.exposure_times):
            raise ValueError("frame/exposure count mismatch")
        if not (np.diff(self.exposure_times) > 0).all():
            raise ValueError("exposure times must be strictly increasing")
        shapes = {f.shape for f in self.frames}
        if len(shapes) != 1:
            raise ValueError(f"frames disagree on dimensions: {sorted(shapes)}")


def _julian_day(utc: datetime) -> float:
    if utc.tzinfo is not None:
        utc = utc.astimezone(timezone.utc).replace(tzinfo=None)
    year, month = utc.year, utc.month
    day = (utc.day + utc.hour / 24.0 + utc.minute / 1440.0
           + (utc.second + utc.microsecond * 1e-6) / 86400.0)
    if month <= 2:
        year -= 1
        month += 12
    a = year // 100
    b = 2 - a + a // 4
    return (math.floor(365.25 * (year + 4716)) + math.floor(30.6001 * (month + 1))
            + day + b - 1524.5)


def sun_direction(latitude: float, longitude: float, utc: datetime) -> SunPosition:
    """Solar azimuth/elevation from the NOAA solar-position approximation.

    Accurate to well under 0.1 degrees against the NOAA calculator within
    1900-2100. Longitude is degrees east; elevation is geometric (no
    atmospheric refraction).
    """
    if not -90.0 <= latitude <= 90.0:
        raise ValueError(f"latitude {latitude} out of range")
    if utc.tzinfo is None:
        utc = utc.replace(tzinfo=timezone.utc)
    if not 1900 <= utc.year <= 2100:
        raise ValueError(f"timestamp {utc.isoformat()} outside the 1900-2100 "
                         "validity window of the approximation")

    jd = _julian_day(utc)
    t = (jd - 2451545.0) / 36525.0

    mean_long = (280.46646 + t * (36000.76983 + t * 0.0003032)) % 360.0
    mean_anom = 357.52911 + t * (35999.05029 - 0.0001537 * t)
    eccent = 0.016708634 - t * (0.000042037 + 0.0000001267 * t)
    m = math.radians(mean_anom)
    eq_center = (math.sin(m) * (1.914602 - t * (0.004817 + 0.000014 * t))
                 + math.sin(2 * m) * (0.019993 - 0.000101 * t)
                 + math.sin(3 * m) * 0.000289)
    true_long = mean_long + eq_center
    omega = math.radians(125.04 - 1934.136 * t)
    app_long = true_long - 0.00569 - 0.00478 * math.sin(omega)

    mean_obliq = 23.0 + (26.0 + (21.448 - t * (46.815 + t * (0.00059 - t * 0.001813))) / 60.0) / 60.0
    obliq = math.radians(mean_obliq + 0.00256 * math.cos(omega))
    lam = math.radians(app_long)
    declination = math.asin(math.sin(obliq) * math.sin(lam))

    y = math.tan(obliq / 2.0) ** 2
    l0 = math.radians(mean_long)
    eq_time_min = 4.0 * math.degrees(
        y * math.sin(2 * l0) - 2 * eccent * math.sin(m)
        + 4 * eccent * y * math.sin(m) * math.cos(2 * l0)
        - 0.5 * y * y * math.sin(4 * l0) - 1.25 * eccent * eccent * math.sin(2 * m))

    utc_naive = utc.astimezone(timezone.utc)
    minutes = (utc_naive.hour * 60.0 + utc_naive.minute
               + (utc_naive.second + utc_naive.microsecond * 1e-6) / 60.0)
    true_solar_min = (minutes + eq_time_min + 4.0 * longitude) % 1440.0
    hour_angle = true_solar_min / 4.0 - 180.0
    if hour_angle < -180.0:
        hour_angle += 360.0
    ha = math.radians(hour_angle)

    lat = math.radians(latitude)
    cos_zenith = (math.sin(lat) * math.sin(declination)
                  + math.cos(lat) * math.cos(declination) * math.cos(ha))
    zenith = math.acos(min(1.0, max(-1.0, cos_zenith)))
    elevation = 90.0 - math.degrees(zenith)

    azimuth = math.degrees(math.atan2(
        math.sin(ha),
        math.cos(ha) * math.sin(lat) - math.tan(declination) * math.cos(lat)))
    azimuth = (azimuth + 180.0) % 360.0
    return SunPosition(azimuth=azimuth, elevation=elevation)


def compute_sun_shading(normals: np.ndarray, sun_vis: BinaryMask,
                        sun: SunPosition) -> np.ndarray:
    """S_sun = V_sun * max(0, n . sun_direction), per pixel."""
    check_same_shape(normals, sun_vis.bits, names=["normals", "sun_vis"])
    cosine = normals.astype(np.float64) @ sun.direction
    return np.where(sun_vis.bits, np.maximum(cosine, 0.0), 0.0).astype(np.float32)


def _sky_mc(buffers: GeometryBuffers, mesh: TriangleMesh, samples: int, seed: int,
            dome_plane: np.ndarray | None, gain: float, bias: float | None) -> np.ndarray:
    if samples < MIN_SKY_SAMPLES:
        raise ValueError(f"samples must be >= {MIN_SKY_SAMPLES}, got {samples}")
    h, w = buffers.depth.shape
    eps = shadow_bias(mesh) if bias is None else bias
    out = np.empty(h * w, dtype=np.float64)
    use_dome = dome_plane is not None
    dome = (np.ascontiguousarray(dome_plane, dtype=np.float64) if use_dome
            else np.zeros((1, 1)))
    _kernels.sky_shading_mc(
        np.ascontiguousarray(buffers.points.reshape(-1, 3)),
        np.ascontiguousarray(buffers.normal.reshape(-1, 3).astype(np.float64)),
        np.ascontiguousarray(buffers.hit.bits.reshape(-1)),
        samples, seed, eps, *mesh._bvh_args(), dome, use_dome, gain, out)
    return out.reshape(h, w).astype(np.float32)


def compute_sky_shading_uniform(buffers: GeometryBuffers, mesh: TriangleMesh,
                                cam: CameraModel, samples: int, seed: int,
                                bias: float | None = None) -> np.ndarray:
    """Uniform-sky S_sky: (1/pi) integral of V_sky <n,w>+ over the hemisphere
    above the horizontal plane. An unoccluded surface evaluates to
    (1 + n.up)/2 up to Monte Carlo noise."""
    return _sky_mc(buffers, mesh, samples, seed, None, 1.0, bias)


def compute_sky_shading_measured(buffers: GeometryBuffers, mesh: TriangleMesh,
                                 cam: CameraModel, dome: SkyDome,
                                 samples: int, seed: int,
                                 bias: float | None = None) -> np.ndarray:
    """Measured-sky S_sky': same estimator and sample streams as the uniform
    variant, weighted by the gain-aligned dome luminance."""
    if not dome.aligned:
        raise ValueError("sky dome has no gain; run align_sky_dome first")
    return _sky_mc(buffers, mesh, samples, seed,
                   dome.equirect.data[:, :, 0], float(dome.gain), bias)


def sky_shading_measured_raw(buffers: GeometryBuffers, mesh: TriangleMesh,
                             cam: CameraModel, dome: SkyDome,
                             samples: int, seed: int,
                             bias: float | None = None) -> np.ndarray:
    """Unaligned dome response (gain forced to 1), used to solve the gain."""
    return _sky_mc(buffers, mesh, samples, seed,
                   dome.equirect.data[:, :, 0], 1.0, bias)


def align_sky_dome(dome: SkyDome, uniform_ssky: np.ndarray,
                   measured_raw_ssky: np.ndarray, valid: BinaryMask,
                   min_valid: int = 100) -> float:
    """Least-squares gain g minimizing sum (g*measured - uniform)^2 over valid
    pixels; stores it on the dome and returns it."""
    check_same_shape(uniform_ssky, measured_raw_ssky, valid.bits,
                     names=["uniform", "measured", "valid"])
    keep = valid.bits
    if int(keep.sum()) < min_valid:
        raise ValueError(f"need >= {min_valid} valid pixels, got {int(keep.sum())}")
    m = measured_raw_ssky[keep].astype(np.float64)
    u = uniform_ssky[keep].astype(np.float64)
    denom = float(m @ m)
    if denom == 0.0:
        raise ValueError("measured sky response is identically zero")
    gain = float(m @ u) / denom
    if gain <= 0.0:
        raise ValueError(f"degenerate alignment gain {gain}")
    dome.gain = gain
    return gain


def merge_hdr(stack: ExposureStack, saturation: float = HDR_SATURATION,
              floor: float = HDR_FLOOR) -> LinearImage:
    """Radiance recovery from a bracketed stack of sensor-linear frames.

    Hat-weighted average of z/t over frames with floor < z < saturation.
    Pixels with no usable frame fall back to the shortest exposure when
    everything clipped high, or the longest when everything clipped low.
    """
    frames = np.stack([np.asarray(f, dtype=np.float64) for f in stack.frames])
    times = stack.exposure_times
    weight = np.minimum(frames - floor, saturation - frames)
    weight = np.where((frames > floor) & (frames < saturation), weight, 0.0)
    ratio = frames / times[:, None, None]

    wsum = weight.sum(axis=0)
    radiance = np.where(wsum > 0, (weight * ratio).sum(axis=0) / np.where(wsum > 0, wsum, 1.0), 0.0)

    no_valid = wsum == 0
    if no_valid.any():
        all_high = no_valid & (frames[0] >= saturation)     # even shortest clipped
        all_low = no_valid & (frames[-1] <= floor)          # even longest floored
        radiance = np.where(all_high, ratio[0], radiance)
        radiance = np.where(all_low, ratio[-1], radiance)
        leftover = no_valid & ~all_high & ~all_low
        if leftover.any():
            best = np.argmax(weight, axis=0)
            radiance = np.where(leftover, np.take_along_axis(
                ratio, best[None], axis=0)[0], radiance)
    return LinearImage(np.maximum(radiance, 0.0).astype(np.float32))


def fisheye_to_equirect(img: LinearImage, fisheye_focal: float, center,
                        rotation_deg: float = 0.0, out_width: int = 512,
                        out_height: int = 256) -> SkyDome:
    """Resample an equidistant fisheye sky capture (r = f * theta) to the
    equirectangular dome layout. Pixels below the horizon are set to 0.

    `rotation_deg` rotates the capture about the zenith so image-up maps to
    north + rotation; the rig is assumed leveled.
    """
    check_positive(fisheye_focal, "fisheye_focal")
    cx, cy = float(center[0]), float(center[1])
    if not (0 <= cx < img.width and 0 <= cy < img.height):
        raise ValueError(f"fisheye center {center} outside the image")
    plane = img.data[:, :, 0].astype(np.float64) if img.channels == 1 else \
        img.data.astype(np.float64).mean(axis=2)

    az = (np.arange(out_width) + 0.5) / out_width * 2.0 * np.pi
    el = np.pi / 2 - (np.arange(out_height) + 0.5) / out_height * np.pi
    az_g, el_g = np.meshgrid(az, el)
    theta = np.pi / 2 - el_g                     # zenith angle
    rho = fisheye_focal * theta
    rot = math.radians(rotation_deg)
    u = cx + rho * np.sin(az_g - rot)
    v = cy - rho * np.cos(az_g - rot)
    values = bilinear_sample(plane, u, v)
    values = np.where(el_g > 0.0, values, 0.0)
    return SkyDome(LinearImage(np.maximum(values, 0.0).astype(np.float32)[:, :, None]))


@dataclass
class SkyCaptureManifest:
    """Frame paths + exposure seconds for one bracketed sky sequence."""

    frame_paths: list[str] = field(default_factory=list)
    exposure_seconds: list[float] = field(default_factory=list)

    @classmethod
    def parse(cls, path) -> "SkyCaptureManifest":
        """One `frame_path exposure_seconds` record per line, '#' comments."""
        manifest = cls()
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                parts = line.split()
                if not parts or parts[0].startswith("#"):
                    continue
                if len(parts) != 2:
                    raise ValueError(f"{path}:{lineno}: expected 'path seconds'")
                manifest.frame_paths.append(parts[0])
                manifest.exposure_seconds.append(float(parts[1]))
        return manifest
