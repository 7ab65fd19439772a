"""Candidate box sampling from size priors and a placement region, plus crop derivation."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import (
    Box3D,
    CameraIntrinsics,
    NotVisible,
    PixelMask,
    RigidTransform,
    clip_polygon_to_rect,
    polygon_area,
    projected_hull,
)

DEFAULT_MIN_AREA_FRAC = 0.8
DEFAULT_MIN_MASK_AREA = 32 * 32
DEFAULT_CROP_MARGIN = 0.5
CROP_GRANULARITY = 64


@dataclass(frozen=True)
class SizePrior:
    """Per-axis (length, width, height) bounds in meters."""

    length: tuple[float, float]
    width: tuple[float, float]
    height: tuple[float, float]

    def __post_init__(self):
        for name in ("length", "width", "height"):
            lo, hi = getattr(self, name)
            if not (0 < lo <= hi):
                raise ValueError(f"{name} bounds must satisfy 0 < min <= max, got ({lo}, {hi})")
            object.__setattr__(self, name, (float(lo), float(hi)))

    def midpoint_sizes(self) -> tuple[float, float, float]:
        return (
            0.5 * (self.length[0] + self.length[1]),
            0.5 * (self.width[0] + self.width[1]),
            0.5 * (self.height[0] + self.height[1]),
        )


@dataclass(frozen=True)
class PlacementRegion:
    """Sensor-frame pose support: x/y ranges, ground height, yaw range.

    z_range is only consulted when sampling with free_z=True; by default the box
    bottom rests on z_ground.
    """

    x_range: tuple[float, float]
    y_range: tuple[float, float]
    z_ground: float
    yaw_range: tuple[float, float]
    z_range: tuple[float, float] | None = None

    def __post_init__(self):
        for name in ("x_range", "y_range", "yaw_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} must satisfy min <= max, got ({lo}, {hi})")
            object.__setattr__(self, name, (float(lo), float(hi)))
        if self.z_range is not None:
            lo, hi = self.z_range
            if lo > hi:
                raise ValueError(f"z_range must satisfy min <= max, got ({lo}, {hi})")
            object.__setattr__(self, "z_range", (float(lo), float(hi)))
        object.__setattr__(self, "z_ground", float(self.z_ground))


@dataclass(frozen=True)
class CropRect:
    """Pixel rectangle with exclusive right/bottom, contained in image bounds."""

    left: int
    top: int
    right: int
    bottom: int

    def __post_init__(self):
        if not (self.left < self.right and self.top < self.bottom):
            raise ValueError(f"degenerate crop rect {self}")
        if self.left < 0 or self.top < 0:
            raise ValueError(f"crop rect extends past the image origin: {self}")

    @property
    def width(self) -> int:
        return self.right - self.left

    @property
    def height(self) -> int:
        return self.bottom - self.top

    def contains(self, other: "CropRect") -> bool:
        return (
            self.left <= other.left
            and self.top <= other.top
            and self.right >= other.right
            and self.bottom >= other.bottom
        )


def candidate_rng(run_seed: int, candidate_index: int) -> np.random.Generator:
    """Per-candidate random stream; independent of worker count and call order."""
    return np.random.default_rng(
        np.random.SeedSequence(entropy=run_seed, spawn_key=(candidate_index,))
    )


def _uniform(rng: np.random.Generator, lo: float, hi: float) -> float:
    if lo == hi:
        return lo
    return float(rng.uniform(lo, hi))


def sample_box(
    prior: SizePrior,
    region: PlacementRegion,
    rng: np.random.Generator,
    free_z: bool = False,
) -> Box3D:
    """Draw one candidate box: sizes uniform in the prior, pose uniform in the region.

    Draw order is fixed (sizes, then x, y, yaw, then optional z) so that a given
    stream always yields the same box.
    """
    s_x = _uniform(rng, *prior.length)
    s_y = _uniform(rng, *prior.width)
    s_z = _uniform(rng, *prior.height)
    c_x = _uniform(rng, *region.x_range)
    c_y = _uniform(rng, *region.y_range)
    yaw = _uniform(rng, *region.yaw_range)
    if free_z:
        z_lo, z_hi = region.z_range if region.z_range is not None else (region.z_ground, region.z_ground)
        c_z = _uniform(rng, z_lo, z_hi)
    else:
        c_z = region.z_ground + s_z / 2.0
    return Box3D(center=(c_x, c_y, c_z), size=(s_x, s_y, s_z), yaw=yaw)


def visibility_gate(
    box: Box3D,
    cam: CameraIntrinsics,
    pose: RigidTransform,
    min_area_frac: float = DEFAULT_MIN_AREA_FRAC,
    min_mask_area: float = DEFAULT_MIN_MASK_AREA,
) -> bool:
    """Cheap pre-filter: accept only boxes mostly inside the image and large enough.

    Both tests run on continuous polygon areas (no rasterization): the in-image
    fraction of the projected hull, and the clipped hull area against the
    min_mask_area pixel-equivalent threshold.
    """
    try:
        hull = projected_hull(box, cam, pose)
    except NotVisible:
        return False
    full_area = polygon_area(hull)
    if full_area <= 0:
        return False
    clipped = clip_polygon_to_rect(hull, 0.0, 0.0, float(cam.width), float(cam.height))
    clipped_area = polygon_area(clipped)
    return clipped_area / full_area >= min_area_frac and clipped_area >= min_mask_area


def inpaint_crop(mask: PixelMask, margin_frac: float = DEFAULT_CROP_MARGIN) -> CropRect:
    """Derive the crop handed to the inpainting backend.

    The tight mask rectangle is dilated by margin_frac of its larger dimension per
    side, clipped to the image, then square-padded up to the next multiple of 64 px
    when the image is large enough; the square keeps its exact size by sliding
    inside the image instead of being truncated.
    """
    if mask.is_empty():
        raise ValueError("cannot derive a crop from an empty mask")
    img_w, img_h = mask.width, mask.height
    left, top, right, bottom = mask.bounding_rect()
    margin = margin_frac * max(right - left, bottom - top)
    d_left = max(0.0, left - margin)
    d_top = max(0.0, top - margin)
    d_right = min(float(img_w), right + margin)
    d_bottom = min(float(img_h), bottom + margin)

    span = max(d_right - d_left, d_bottom - d_top)
    side = max(CROP_GRANULARITY, CROP_GRANULARITY * math.ceil(span / CROP_GRANULARITY))

    def axis_extent(lo: float, hi: float, size: int, img_size: int) -> tuple[int, int]:
        if size >= img_size:
            return 0, img_size
        start = int(round((lo + hi) / 2.0 - size / 2.0))
        start = min(max(start, 0), img_size - size)
        return start, start + size

    x0, x1 = axis_extent(d_left, d_right, side, img_w)
    y0, y1 = axis_extent(d_top, d_bottom, side, img_h)
    crop = CropRect(left=x0, top=y0, right=x1, bottom=y1)
    assert crop.contains(CropRect(left, top, right, bottom))
    return crop
