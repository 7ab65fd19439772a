"""Oriented-box fitting via XY eigen-decomposition and the size/point-count pass rule."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import VeriaError
from .geometry import Box3D, wrap_angle
from .pointcloud import PointCloud

DEFAULT_LAMBDA = 0.5
DEFAULT_MIN_POINTS = 5

# Eigenvalue tie and span-degeneracy guards.
_EIG_TIE = 1e-12
_MIN_SPAN = 1e-12


class DegenerateCloud(VeriaError):
    """Fewer than 3 points, or all points XY-collinear; no box can be fitted."""


@dataclass(frozen=True)
class GeoVerifyConfig:
    lam: float = DEFAULT_LAMBDA
    p_n: int = DEFAULT_MIN_POINTS

    def __post_init__(self):
        if not 0 < self.lam <= 1:
            raise ValueError(f"lambda must lie in (0, 1], got {self.lam}")
        if self.p_n < 1:
            raise ValueError(f"p_n must be >= 1, got {self.p_n}")


@dataclass(frozen=True)
class GeoVerdict:
    passed: bool
    fitted_sizes: tuple[float, float, float] | None
    size_ratios: tuple[float, float, float] | None
    point_count: int
    fail_reason: str  # too_few_points | size_x | size_y | size_z | none

    def __post_init__(self):
        if self.passed != (self.fail_reason == "none"):
            raise ValueError("passed must hold exactly when fail_reason is 'none'")
        if self.size_ratios is not None and any(r <= 0 for r in self.size_ratios):
            raise ValueError("size ratios must be positive")


def fit_obb_xy(cloud: PointCloud) -> Box3D:
    """Fit an oriented box: yaw from the principal XY eigenvector, extents from spans.

    Yaw is normalized to [-pi/2, pi/2); near-equal eigenvalues tie-break to yaw 0.
    The z extent is the raw vertical span (the eigen-decomposition is restricted
    to the XY plane) and is clamped to a tiny positive value for flat clouds so
    the returned box stays valid; such ratios then fail verification anyway.
    """
    pts = cloud.points
    if len(pts) < 3:
        raise DegenerateCloud(f"need at least 3 points, have {len(pts)}")
    xy = pts[:, :2]
    centered = xy - xy.mean(axis=0)
    cov = centered.T @ centered / len(xy)
    eigenvalues, eigenvectors = np.linalg.eigh(cov)
    if abs(eigenvalues[1] - eigenvalues[0]) < _EIG_TIE:
        yaw = 0.0
    else:
        principal = eigenvectors[:, 1]
        yaw = wrap_angle(math.atan2(principal[1], principal[0]))
        if yaw >= math.pi / 2:
            yaw -= math.pi
        elif yaw < -math.pi / 2:
            yaw += math.pi
    c, s = math.cos(yaw), math.sin(yaw)
    u = xy[:, 0] * c + xy[:, 1] * s
    v = -xy[:, 0] * s + xy[:, 1] * c
    span_u = float(u.max() - u.min())
    span_v = float(v.max() - v.min())
    if span_u < _MIN_SPAN or span_v < _MIN_SPAN:
        raise DegenerateCloud("points are collinear or coincident in XY")
    z = pts[:, 2]
    span_z = float(z.max() - z.min())
    mid_u, mid_v = (u.max() + u.min()) / 2.0, (v.max() + v.min()) / 2.0
    center = (
        float(mid_u * c - mid_v * s),
        float(mid_u * s + mid_v * c),
        float((z.max() + z.min()) / 2.0),
    )
    return Box3D(center=center, size=(span_u, span_v, max(span_z, _MIN_SPAN)), yaw=yaw)


def _ordered_horizontal(sizes: tuple[float, float, float]) -> tuple[float, float, float]:
    """Order the two horizontal extents descending; z stays last."""
    a, b, c = sizes
    return (max(a, b), min(a, b), c)


def verify_geometry(
    cloud: PointCloud,
    target_sizes: tuple[float, float, float],
    cfg: GeoVerifyConfig = GeoVerifyConfig(),
) -> GeoVerdict:
    """Accept iff the cloud has >= p_n points and every fitted extent lies within
    the inclusive per-axis tolerance band [(1 - lambda) s_i, (1 + lambda) s_i].

    Horizontal extents are paired to targets after ordering both descending,
    since the XY eigen fit cannot distinguish length from width labeling.
    """
    if any(s <= 0 for s in target_sizes):
        raise ValueError(f"target sizes must be positive, got {target_sizes}")
    count = len(cloud)
    try:
        box = fit_obb_xy(cloud)
    except DegenerateCloud:
        return GeoVerdict(
            passed=False,
            fitted_sizes=None,
            size_ratios=None,
            point_count=count,
            fail_reason="too_few_points",
        )
    fitted = _ordered_horizontal(box.size)
    target = _ordered_horizontal(tuple(float(s) for s in target_sizes))
    ratios = tuple(f / t for f, t in zip(fitted, target))

    if count < cfg.p_n:
        return GeoVerdict(
            passed=False,
            fitted_sizes=fitted,
            size_ratios=ratios,
            point_count=count,
            fail_reason="too_few_points",
        )
    lo, hi = 1.0 - cfg.lam, 1.0 + cfg.lam
    for axis, ratio in zip(("size_x", "size_y", "size_z"), ratios):
        if not (lo <= ratio <= hi):
            return GeoVerdict(
                passed=False,
                fitted_sizes=fitted,
                size_ratios=ratios,
                point_count=count,
                fail_reason=axis,
            )
    return GeoVerdict(
        passed=True,
        fitted_sizes=fitted,
        size_ratios=ratios,
        point_count=count,
        fail_reason="none",
    )
