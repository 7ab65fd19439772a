"""Pseudo-LiDAR reconstruction: backprojection, contour filtering, scale anchoring,
spherical rasterization to a target sensor grid, and intensity simulation."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .errors import VeriaError
from .geometry import CameraIntrinsics, PixelMask
from .providers import DepthMap

DEFAULT_BAND_PX = 2
DEFAULT_TAU_EDGE = 0.3
DEFAULT_R_REF = 10.0
EXTENT_EPS = 1e-6


class EmptyCloud(VeriaError):
    """No valid masked pixel survived backprojection."""


class DegenerateExtent(VeriaError):
    """Vertical extent too small to anchor scale; candidate dropped."""


class TooFewPoints(VeriaError):
    """Not enough points for the requested neighborhood size."""


@dataclass(eq=False)
class PointCloud:
    """Metric 3D points with optional per-point intensity and provenance.

    `source_pixels` records the (u, v) pixel each point came from (set by
    backproject_region). `ranges` caches exact spherical ranges for clouds built
    by from_range_image; it is only meaningful while the points are unmoved, so
    any transform drops it.
    """

    points: np.ndarray
    intensity: np.ndarray | None = None
    source_pixels: np.ndarray | None = None
    ranges: np.ndarray | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if pts.size and not np.isfinite(pts).all():
            raise ValueError("point coordinates must be finite")
        self.points = pts
        if self.intensity is not None:
            inten = np.asarray(self.intensity, dtype=np.float64).reshape(-1)
            if len(inten) != len(pts):
                raise ValueError("intensity must have one entry per point")
            if inten.size and ((inten < 0).any() or (inten > 1).any()):
                raise ValueError("intensity values must lie in [0, 1]")
            self.intensity = inten
        if self.source_pixels is not None:
            src = np.asarray(self.source_pixels, dtype=np.int64).reshape(-1, 2)
            if len(src) != len(pts):
                raise ValueError("source_pixels must have one entry per point")
            self.source_pixels = src
        if self.ranges is not None:
            rng = np.asarray(self.ranges, dtype=np.float64).reshape(-1)
            if len(rng) != len(pts):
                raise ValueError("ranges must have one entry per point")
            self.ranges = rng

    def __len__(self) -> int:
        return len(self.points)

    def take(self, index: np.ndarray) -> "PointCloud":
        return PointCloud(
            points=self.points[index],
            intensity=None if self.intensity is None else self.intensity[index],
            source_pixels=None if self.source_pixels is None else self.source_pixels[index],
            ranges=None if self.ranges is None else self.ranges[index],
        )

    def transformed(self, rotation: np.ndarray, translation: np.ndarray) -> "PointCloud":
        pts = self.points @ np.asarray(rotation, dtype=float).T + np.asarray(translation, dtype=float)
        return PointCloud(points=pts, intensity=self.intensity, source_pixels=self.source_pixels)


@dataclass(frozen=True, eq=False)
class SensorSpec:
    """Beam layout, angular resolution, FOV and range limits of a spinning LiDAR."""

    elevations: np.ndarray  # strictly increasing beam angles, radians
    azimuth_resolution: float
    fov: tuple[float, float]
    range_limits: tuple[float, float]
    name: str = ""

    def __post_init__(self):
        elev = np.asarray(self.elevations, dtype=np.float64).reshape(-1)
        if len(elev) < 1:
            raise ValueError("need at least one beam")
        if len(elev) > 1 and not (np.diff(elev) > 0).all():
            raise ValueError("beam elevations must be strictly increasing")
        if self.azimuth_resolution <= 0:
            raise ValueError("azimuth resolution must be positive")
        fov = (float(self.fov[0]), float(self.fov[1]))
        if fov[0] >= fov[1]:
            raise ValueError("horizontal FOV must satisfy min < max")
        r_min, r_max = (float(self.range_limits[0]), float(self.range_limits[1]))
        if not (0 < r_min < r_max):
            raise ValueError("range limits must satisfy 0 < r_min < r_max")
        object.__setattr__(self, "elevations", elev)
        object.__setattr__(self, "fov", fov)
        object.__setattr__(self, "range_limits", (r_min, r_max))

    @property
    def n_beams(self) -> int:
        return len(self.elevations)

    @property
    def cols(self) -> int:
        return int(math.ceil((self.fov[1] - self.fov[0]) / self.azimuth_resolution))

    def beam_half_widths(self) -> tuple[np.ndarray, np.ndarray]:
        """Acceptance half-widths below/above each beam (half the adjacent gap)."""
        elev = self.elevations
        if len(elev) == 1:
            half = np.array([self.azimuth_resolution / 2.0])
            return half, half
        gaps = np.diff(elev)
        low = np.concatenate([[gaps[0]], gaps]) / 2.0
        high = np.concatenate([gaps, [gaps[-1]]]) / 2.0
        return low, high

    def bin_center_azimuth(self, col: np.ndarray) -> np.ndarray:
        """Azimuth at the center of each column bin; the last partial bin is
        centered within its clipped extent so it stays inside the FOV."""
        left = self.fov[0] + np.asarray(col, dtype=np.float64) * self.azimuth_resolution
        right = np.minimum(left + self.azimuth_resolution, self.fov[1])
        return (left + right) / 2.0

    @staticmethod
    def uniform(
        n_beams: int,
        elevation_range: tuple[float, float],
        azimuth_resolution: float,
        fov: tuple[float, float],
        range_limits: tuple[float, float],
        name: str = "",
    ) -> "SensorSpec":
        elev = np.linspace(elevation_range[0], elevation_range[1], n_beams)
        return SensorSpec(elev, azimuth_resolution, fov, range_limits, name)


SENSOR_PRESETS: dict[str, SensorSpec] = {
    "32-beam": SensorSpec.uniform(
        32,
        (math.radians(-30.67), math.radians(10.67)),
        math.radians(0.33),
        (-math.pi, math.pi),
        (0.9, 70.0),
        name="32-beam",
    ),
    "64-beam": SensorSpec.uniform(
        64,
        (math.radians(-24.8), math.radians(2.0)),
        math.radians(0.1728),
        (-math.pi, math.pi),
        (0.9, 120.0),
        name="64-beam",
    ),
}


@dataclass(eq=False)
class RangeImage:
    """Sensor-grid raster: per-cell range (and optional intensity) with validity."""

    range: np.ndarray
    valid: np.ndarray
    intensity: np.ndarray | None = None

    def __post_init__(self):
        rng = np.asarray(self.range, dtype=np.float64)
        valid = np.asarray(self.valid, dtype=bool)
        if rng.ndim != 2 or rng.shape != valid.shape:
            raise ValueError("range and valid must be matching 2D arrays")
        self.range = rng
        self.valid = valid
        if self.intensity is not None:
            inten = np.asarray(self.intensity, dtype=np.float64)
            if inten.shape != rng.shape:
                raise ValueError("intensity raster shape mismatch")
            self.intensity = inten

    @property
    def rows(self) -> int:
        return self.range.shape[0]

    @property
    def cols(self) -> int:
        return self.range.shape[1]


def backproject_region(depth: DepthMap, obj_mask: PixelMask, cam: CameraIntrinsics) -> PointCloud:
    """One camera-frame point per valid masked pixel (pinhole backprojection)."""
    if (obj_mask.height, obj_mask.width) != (depth.height, depth.width):
        raise ValueError("mask and depth dimensions must match")
    select = obj_mask.bits & depth.valid
    if not select.any():
        raise EmptyCloud("no valid masked pixel to backproject")
    vs, us = np.nonzero(select)
    d = depth.depth[vs, us].astype(np.float64)
    x = (us.astype(np.float64) - cam.cx) / cam.fx * d
    y = (vs.astype(np.float64) - cam.cy) / cam.fy * d
    points = np.stack([x, y, d], axis=1)
    return PointCloud(points=points, source_pixels=np.stack([us, vs], axis=1))


def contour_band_filter(
    cloud: PointCloud,
    obj_mask: PixelMask,
    band_px: int = DEFAULT_BAND_PX,
    tau_edge: float = DEFAULT_TAU_EDGE,
) -> PointCloud:
    """Drop boundary-band points whose depth deviates from the local interior median.

    A point is removed when its source pixel lies within band_px of the mask
    boundary and its depth differs by more than tau_edge from the median depth of
    interior (non-band) cloud pixels inside the surrounding 5x5 window. Interior
    points are always kept, as are band points with no interior reference nearby.
    Expects the camera-frame cloud fresh from backproject_region (depth == z).
    """
    if band_px == 0 or len(cloud) == 0:
        return cloud
    if cloud.source_pixels is None:
        raise ValueError("contour filtering needs per-point source-pixel provenance")
    if obj_mask.is_empty():
        return cloud
    # Work on the mask's bounding window; erosion on the full image would waste
    # most of its time on empty background.
    left, top, right, bottom = obj_mask.bounding_rect()
    window = obj_mask.bits[top:bottom, left:right]
    band_window = window & ~ndimage.binary_erosion(
        window, structure=np.ones((3, 3), dtype=bool), iterations=band_px
    )
    us, vs = cloud.source_pixels[:, 0], cloud.source_pixels[:, 1]
    in_rect = (us >= left) & (us < right) & (vs >= top) & (vs < bottom)
    in_band = np.zeros(len(cloud), dtype=bool)
    in_band[in_rect] = band_window[vs[in_rect] - top, us[in_rect] - left]
    if not in_band.any():
        return cloud

    h, w = bottom - top, right - left
    interior_depth = np.full((h, w), np.nan)
    keep_interior = in_rect & ~in_band
    interior_depth[vs[keep_interior] - top, us[keep_interior] - left] = cloud.points[
        keep_interior, 2
    ]

    pad = 2  # 5x5 window
    padded = np.pad(interior_depth, pad, constant_values=np.nan)
    windows = np.lib.stride_tricks.sliding_window_view(padded, (2 * pad + 1, 2 * pad + 1))
    band_windows = windows[vs[in_band] - top, us[in_band] - left].reshape(in_band.sum(), -1)
    has_reference = ~np.isnan(band_windows).all(axis=1)
    local_median = np.full(len(band_windows), np.nan)
    if has_reference.any():
        local_median[has_reference] = np.nanmedian(band_windows[has_reference], axis=1)
    deviation = np.abs(cloud.points[in_band, 2] - local_median)
    # Band points with no interior reference nearby (NaN median) are kept.
    remove_band = deviation > tau_edge

    keep = np.ones(len(cloud), dtype=bool)
    band_indices = np.flatnonzero(in_band)
    keep[band_indices[remove_band]] = False
    return cloud.take(keep)


def anchor_scale(
    cloud: PointCloud,
    target_height: float,
    origin: np.ndarray | tuple[float, float, float] = (0.0, 0.0, 0.0),
    eps: float = EXTENT_EPS,
) -> PointCloud:
    """Scale the cloud about `origin` so its vertical (z) extent equals target_height.

    The cloud must already be in a gravity-aligned frame (z up). Raises
    DegenerateExtent for planar or line-like reconstructions.
    """
    if len(cloud) == 0:
        raise EmptyCloud("cannot anchor an empty cloud")
    z = cloud.points[:, 2]
    extent = float(z.max() - z.min())
    if extent <= eps:
        raise DegenerateExtent(f"vertical extent {extent:.3g} m below {eps:.3g} m")
    factor = target_height / extent
    origin = np.asarray(origin, dtype=np.float64)
    points = origin + (cloud.points - origin) * factor
    return PointCloud(points=points, intensity=cloud.intensity, source_pixels=cloud.source_pixels)


def _spherical_bins(cloud: PointCloud, sensor: SensorSpec):
    """Shared binning: returns (row, col, range, ok) for each point.

    Uses cached exact ranges when the cloud carries raster provenance.
    """
    pts = cloud.points
    if cloud.ranges is not None:
        r = cloud.ranges
    else:
        r = np.sqrt((pts * pts).sum(axis=1))
    r_min, r_max = sensor.range_limits
    ok = (r >= r_min) & (r <= r_max)

    with np.errstate(invalid="ignore", divide="ignore"):
        elevation = np.arcsin(np.clip(pts[:, 2] / np.where(r > 0, r, np.inf), -1.0, 1.0))
    azimuth = np.arctan2(pts[:, 1], pts[:, 0])

    beams = sensor.elevations
    idx = np.searchsorted(beams, elevation)
    lower = np.clip(idx - 1, 0, len(beams) - 1)
    upper = np.clip(idx, 0, len(beams) - 1)
    pick_upper = np.abs(beams[upper] - elevation) < np.abs(beams[lower] - elevation)
    row = np.where(pick_upper, upper, lower)
    half_low, half_high = sensor.beam_half_widths()
    deviation = elevation - beams[row]
    ok &= np.where(deviation >= 0, deviation <= half_high[row], -deviation <= half_low[row])

    fov_min, fov_max = sensor.fov
    ok &= (azimuth >= fov_min) & (azimuth < fov_max)
    col = np.floor((azimuth - fov_min) / sensor.azimuth_resolution).astype(np.int64)
    ok &= (col >= 0) & (col < sensor.cols)
    return row, col, r, ok


def to_range_image(cloud: PointCloud, sensor: SensorSpec) -> RangeImage:
    """Rasterize a sensor-frame cloud onto the (beam, azimuth-bin) grid.

    Points outside the angular FOV or range limits are dropped; cell conflicts
    resolve to the minimum range (nearest surface wins) and the winning point's
    intensity. Ranges are stored unquantized.
    """
    rows_n, cols_n = sensor.n_beams, sensor.cols
    rng = np.zeros((rows_n, cols_n), dtype=np.float64)
    valid = np.zeros((rows_n, cols_n), dtype=bool)
    inten = np.zeros((rows_n, cols_n), dtype=np.float64) if cloud.intensity is not None else None
    if len(cloud) == 0:
        return RangeImage(rng, valid, inten)

    row, col, r, ok = _spherical_bins(cloud, sensor)
    if not ok.any():
        return RangeImage(rng, valid, inten)
    row, col, r = row[ok], col[ok], r[ok]
    src = np.flatnonzero(ok)

    flat = row * cols_n + col
    order = np.lexsort((r, flat))
    flat_sorted = flat[order]
    first = np.ones(len(flat_sorted), dtype=bool)
    first[1:] = flat_sorted[1:] != flat_sorted[:-1]
    winners = order[first]

    rng.ravel()[flat[winners]] = r[winners]
    valid.ravel()[flat[winners]] = True
    if inten is not None:
        inten.ravel()[flat[winners]] = cloud.intensity[src[winners]]
    return RangeImage(rng, valid, inten)


def from_range_image(ri: RangeImage, sensor: SensorSpec) -> PointCloud:
    """One point per valid cell, at (cell range, beam elevation, bin-center azimuth)."""
    if (ri.rows, ri.cols) != (sensor.n_beams, sensor.cols):
        raise ValueError("range image dimensions do not match the sensor grid")
    vs, us = np.nonzero(ri.valid)
    r = ri.range[vs, us]
    elevation = sensor.elevations[vs]
    azimuth = sensor.bin_center_azimuth(us)
    cos_el = np.cos(elevation)
    points = np.stack(
        [r * cos_el * np.cos(azimuth), r * cos_el * np.sin(azimuth), r * np.sin(elevation)],
        axis=1,
    )
    intensity = None if ri.intensity is None else ri.intensity[vs, us]
    return PointCloud(points=points, intensity=intensity, ranges=r.copy())


def estimate_normals(
    cloud: PointCloud, k: int = 8, origin: np.ndarray | tuple[float, float, float] = (0.0, 0.0, 0.0)
) -> np.ndarray:
    """Per-point unit normals from the k-NN covariance, oriented toward `origin`."""
    n = len(cloud)
    if n < k + 1:
        raise TooFewPoints(f"need at least {k + 1} points, have {n}")
    pts = cloud.points
    tree = cKDTree(pts)
    _, neighbor_idx = tree.query(pts, k=k + 1)
    neighbors = pts[neighbor_idx]  # (n, k+1, 3)
    centered = neighbors - neighbors.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / (k + 1)
    _, vecs = np.linalg.eigh(cov)
    normals = vecs[:, :, 0]  # smallest-eigenvalue eigenvector
    to_origin = np.asarray(origin, dtype=np.float64) - pts
    flip = np.einsum("ni,ni->n", normals, to_origin) < 0
    normals[flip] *= -1.0
    norms = np.linalg.norm(normals, axis=1, keepdims=True)
    return normals / np.where(norms > 0, norms, 1.0)


def simulate_intensity(
    cloud: PointCloud,
    gray: np.ndarray,
    sensor_origin: np.ndarray | tuple[float, float, float] = (0.0, 0.0, 0.0),
    r_ref: float = DEFAULT_R_REF,
    normals: np.ndarray | None = None,
    k: int = 8,
    constant: float | None = None,
) -> PointCloud:
    """Per-point intensity from grayscale, incidence angle, and range attenuation.

    intensity = clamp(gray * max(0, n . v) * min(1, (r_ref / r)^2), 0, 1), with v
    the unit direction from the point to the sensor. When `constant` is given
    (constant-intensity sensors), every point gets that value instead.
    """
    if constant is not None:
        if not 0.0 <= constant <= 1.0:
            raise ValueError("constant intensity must lie in [0, 1]")
        inten = np.full(len(cloud), float(constant))
        return PointCloud(points=cloud.points, intensity=inten, source_pixels=cloud.source_pixels)

    gray = np.asarray(gray, dtype=np.float64).reshape(-1)
    if len(gray) != len(cloud):
        raise ValueError("gray must have one value per point")
    if normals is None:
        normals = estimate_normals(cloud, k=k, origin=sensor_origin)
    origin = np.asarray(sensor_origin, dtype=np.float64)
    to_sensor = origin - cloud.points
    r = np.linalg.norm(to_sensor, axis=1)
    v = to_sensor / np.where(r[:, None] > 0, r[:, None], 1.0)
    cos_term = np.maximum(0.0, np.einsum("ni,ni->n", normals, v))
    with np.errstate(divide="ignore"):
        atten = np.minimum(1.0, (r_ref / np.where(r > 0, r, np.inf)) ** 2)
    inten = np.clip(gray * cos_term * atten, 0.0, 1.0)
    return PointCloud(points=cloud.points, intensity=inten, source_pixels=cloud.source_pixels)
