"""Camera and rigid-body geometry: 3D boxes, image projection, backprojection."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import VeriaError

# Camera-frame depth below this counts as behind the lens.
EPS_DEPTH = 1e-6

# Tolerance for point-on-edge containment; ties on hull edges count as inside.
_EDGE_TOL = 1e-9


class NotVisible(VeriaError):
    """No box corner lands inside the camera frustum."""


class InvalidDepth(VeriaError):
    """Backprojection requested for a non-positive depth."""


def wrap_angle(theta: float) -> float:
    """Wrap an angle to [-pi, pi)."""
    return float((theta + math.pi) % (2.0 * math.pi) - math.pi)


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError(f"focal lengths must be positive, got fx={self.fx} fy={self.fy}")
        if self.width < 1 or self.height < 1:
            raise ValueError("image dimensions must be >= 1")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """Proper rigid transform: x' = R @ x + t."""

    rotation: np.ndarray
    translation: np.ndarray

    _ORTHO_TOL = 1e-9

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=float)
        trans = np.asarray(self.translation, dtype=float).reshape(3)
        if rot.shape != (3, 3):
            raise ValueError("rotation must be a 3x3 matrix")
        if np.abs(rot.T @ rot - np.eye(3)).max() > self._ORTHO_TOL:
            raise ValueError("rotation is not orthonormal")
        if abs(float(np.linalg.det(rot)) - 1.0) > self._ORTHO_TOL:
            raise ValueError("rotation determinant must be +1")
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", trans)

    def apply(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        single = pts.ndim == 1
        out = np.atleast_2d(pts) @ self.rotation.T + self.translation
        return out[0] if single else out

    def inverse(self) -> "RigidTransform":
        return RigidTransform(self.rotation.T, -self.rotation.T @ self.translation)

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """Transform applying `other` first, then `self`."""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.eye(3), np.zeros(3))

    @staticmethod
    def rotation_z(angle: float) -> "RigidTransform":
        c, s = math.cos(angle), math.sin(angle)
        return RigidTransform(
            np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]), np.zeros(3)
        )


@dataclass(frozen=True)
class Box3D:
    """7-DoF oriented box: center (m), size (m), yaw about +z (rad, [-pi, pi))."""

    center: tuple[float, float, float]
    size: tuple[float, float, float]
    yaw: float

    def __post_init__(self):
        center = tuple(float(c) for c in self.center)
        size = tuple(float(s) for s in self.size)
        if len(center) != 3 or len(size) != 3:
            raise ValueError("center and size must have 3 components")
        if any(s <= 0 for s in size):
            raise ValueError(f"box sizes must be positive, got {size}")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "size", size)
        object.__setattr__(self, "yaw", wrap_angle(float(self.yaw)))

    def as_box7(self) -> list[float]:
        return [*self.center, *self.size, self.yaw]

    @staticmethod
    def from_box7(values) -> "Box3D":
        v = [float(x) for x in values]
        if len(v) != 7:
            raise ValueError("box7 must have exactly 7 values")
        return Box3D(center=(v[0], v[1], v[2]), size=(v[3], v[4], v[5]), yaw=v[6])


@dataclass(eq=False)
class PixelMask:
    """Per-pixel boolean occupancy aligned to an image grid."""

    bits: np.ndarray

    def __post_init__(self):
        bits = np.asarray(self.bits)
        if bits.ndim != 2:
            raise ValueError("mask bits must be a 2D array")
        self.bits = bits.astype(bool, copy=False)

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def area(self) -> int:
        return int(self.bits.sum())

    def is_empty(self) -> bool:
        return not self.bits.any()

    def bounding_rect(self) -> tuple[int, int, int, int]:
        """Tight (left, top, right, bottom) with exclusive right/bottom."""
        if self.is_empty():
            raise ValueError("empty mask has no bounding rectangle")
        rows = np.flatnonzero(self.bits.any(axis=1))
        cols = np.flatnonzero(self.bits.any(axis=0))
        return int(cols[0]), int(rows[0]), int(cols[-1]) + 1, int(rows[-1]) + 1


# Corner ordering: bottom face CCW viewed from +z, then top face in the same order.
_CORNER_SIGNS = np.array(
    [
        [+1, +1, -1],
        [-1, +1, -1],
        [-1, -1, -1],
        [+1, -1, -1],
        [+1, +1, +1],
        [-1, +1, +1],
        [-1, -1, +1],
        [+1, -1, +1],
    ],
    dtype=float,
)


def box_corners(box: Box3D) -> np.ndarray:
    """Eight ordered corners of an oriented box, shape (8, 3)."""
    half = 0.5 * np.asarray(box.size)
    local = _CORNER_SIGNS * half
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return local @ rot.T + np.asarray(box.center)


def project_points(
    points: np.ndarray, cam: CameraIntrinsics, pose: RigidTransform
) -> tuple[np.ndarray, np.ndarray]:
    """Pinhole-project sensor-frame points into the image.

    Args:
        points: (N, 3) points in the sensor frame.
        pose: sensor-to-camera transform.

    Returns:
        (uv, valid): (N, 2) pixel coordinates and an (N,) validity flag. A point is
        valid when its camera-frame depth exceeds EPS_DEPTH and it lands inside
        [0, width) x [0, height). Pixel coordinates of behind-camera points are NaN.
    """
    pts_cam = np.atleast_2d(pose.apply(points))
    z = pts_cam[:, 2]
    in_front = z > EPS_DEPTH
    safe_z = np.where(in_front, z, np.nan)
    u = cam.fx * pts_cam[:, 0] / safe_z + cam.cx
    v = cam.fy * pts_cam[:, 1] / safe_z + cam.cy
    valid = in_front & (u >= 0) & (u < cam.width) & (v >= 0) & (v < cam.height)
    return np.stack([u, v], axis=1), valid


def backproject(u: float, v: float, depth: float, cam: CameraIntrinsics) -> np.ndarray:
    """Lift pixel (u, v) at the given metric depth to a camera-frame 3D point."""
    if depth <= 0:
        raise InvalidDepth(f"depth must be positive, got {depth}")
    return np.array(
        [(u - cam.cx) / cam.fx * depth, (v - cam.cy) / cam.fy * depth, float(depth)]
    )


def convex_hull(points: np.ndarray) -> np.ndarray:
    """2D convex hull via monotone chain, returned CCW without repeated endpoint."""
    pts = np.unique(np.asarray(points, dtype=float), axis=0)
    if len(pts) <= 2:
        return pts
    # np.unique sorts lexicographically, which is what the chain construction needs.
    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower: list[np.ndarray] = []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list[np.ndarray] = []
    for p in pts[::-1]:
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.array(lower[:-1] + upper[:-1])


def polygon_area(poly: np.ndarray) -> float:
    """Shoelace area; positive for CCW vertex order."""
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def clip_polygon_to_rect(
    poly: np.ndarray, left: float, top: float, right: float, bottom: float
) -> np.ndarray:
    """Sutherland-Hodgman clip of a convex polygon against an axis-aligned rect."""
    def clip_edge(vertices, inside, intersect):
        out = []
        n = len(vertices)
        for i in range(n):
            cur, nxt = vertices[i], vertices[(i + 1) % n]
            cur_in, nxt_in = inside(cur), inside(nxt)
            if cur_in:
                out.append(cur)
                if not nxt_in:
                    out.append(intersect(cur, nxt))
            elif nxt_in:
                out.append(intersect(cur, nxt))
        return out

    def x_cross(a, b, x):
        t = (x - a[0]) / (b[0] - a[0])
        return np.array([x, a[1] + t * (b[1] - a[1])])

    def y_cross(a, b, y):
        t = (y - a[1]) / (b[1] - a[1])
        return np.array([a[0] + t * (b[0] - a[0]), y])

    vertices = [np.asarray(p, dtype=float) for p in poly]
    for inside, intersect in (
        (lambda p: p[0] >= left, lambda a, b: x_cross(a, b, left)),
        (lambda p: p[0] <= right, lambda a, b: x_cross(a, b, right)),
        (lambda p: p[1] >= top, lambda a, b: y_cross(a, b, top)),
        (lambda p: p[1] <= bottom, lambda a, b: y_cross(a, b, bottom)),
    ):
        if not vertices:
            break
        vertices = clip_edge(vertices, inside, intersect)
    return np.array(vertices) if vertices else np.empty((0, 2))


def rasterize_convex(poly: np.ndarray, width: int, height: int) -> np.ndarray:
    """Fill a convex CCW polygon onto a (height, width) boolean grid.

    A pixel is set when its center (integer coordinates) lies inside the polygon;
    centers exactly on an edge count as inside.
    """
    bits = np.zeros((height, width), dtype=bool)
    if len(poly) == 0:
        return bits
    x0 = max(0, int(math.floor(poly[:, 0].min())))
    x1 = min(width - 1, int(math.ceil(poly[:, 0].max())))
    y0 = max(0, int(math.floor(poly[:, 1].min())))
    y1 = min(height - 1, int(math.ceil(poly[:, 1].max())))
    if x1 < x0 or y1 < y0:
        return bits
    xs = np.arange(x0, x1 + 1, dtype=float)
    ys = np.arange(y0, y1 + 1, dtype=float)
    gx, gy = np.meshgrid(xs, ys)
    if len(poly) == 1:
        inside = (np.abs(gx - poly[0, 0]) < _EDGE_TOL) & (np.abs(gy - poly[0, 1]) < _EDGE_TOL)
    elif len(poly) == 2:
        # Degenerate hull: points on the segment.
        a, b = poly
        d = b - a
        seg_len2 = float(d @ d)
        t = ((gx - a[0]) * d[0] + (gy - a[1]) * d[1]) / max(seg_len2, _EDGE_TOL)
        px, py = a[0] + t * d[0], a[1] + t * d[1]
        on_seg = (t >= -_EDGE_TOL) & (t <= 1 + _EDGE_TOL)
        inside = on_seg & (np.hypot(gx - px, gy - py) < 0.5)
    else:
        inside = np.ones_like(gx, dtype=bool)
        n = len(poly)
        for i in range(n):
            ax, ay = poly[i]
            bx, by = poly[(i + 1) % n]
            inside &= (bx - ax) * (gy - ay) - (by - ay) * (gx - ax) >= -_EDGE_TOL
    bits[y0 : y1 + 1, x0 : x1 + 1] = inside
    return bits


def projected_hull(
    box: Box3D, cam: CameraIntrinsics, pose: RigidTransform
) -> np.ndarray:
    """Convex hull (pixel coords, possibly extending past the image) of the
    projected front-of-camera corners.

    Raises:
        NotVisible: if no corner projects with valid=True.
    """
    corners = box_corners(box)
    uv, valid = project_points(corners, cam, pose)
    if not valid.any():
        raise NotVisible("no box corner projects inside the image")
    in_front = pose.apply(corners)[:, 2] > EPS_DEPTH
    return convex_hull(uv[in_front])


def box_to_mask(box: Box3D, cam: CameraIntrinsics, pose: RigidTransform) -> PixelMask:
    """Project a 3D box and fill the convex hull of its corners, clipped to the image.

    Corners behind the camera are excluded from the hull; boxes partially outside
    the image are clipped rather than rejected.

    Raises:
        NotVisible: if no corner projects with valid=True.
    """
    hull = projected_hull(box, cam, pose)
    return PixelMask(rasterize_convex(hull, cam.width, cam.height))
