"""Geometry module: boxes, projection, backprojection, mask rasterization."""

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.spatial import ConvexHull

from veria.geometry import (
    Box3D,
    CameraIntrinsics,
    InvalidDepth,
    NotVisible,
    PixelMask,
    RigidTransform,
    backproject,
    box_corners,
    box_to_mask,
    clip_polygon_to_rect,
    convex_hull,
    polygon_area,
    project_points,
    wrap_angle,
)

from conftest import make_box


class TestTypes:
    def test_intrinsics_invariants(self):
        with pytest.raises(ValueError):
            CameraIntrinsics(fx=-1, fy=500, cx=320, cy=240, width=640, height=480)
        with pytest.raises(ValueError):
            CameraIntrinsics(fx=500, fy=500, cx=700, cy=240, width=640, height=480)
        with pytest.raises(ValueError):
            CameraIntrinsics(fx=500, fy=500, cx=320, cy=240, width=0, height=480)

    def test_rotation_must_be_orthonormal(self):
        with pytest.raises(ValueError):
            RigidTransform(np.eye(3) * 1.001, np.zeros(3))
        # Determinant -1 (reflection) is rejected.
        refl = np.diag([1.0, 1.0, -1.0])
        with pytest.raises(ValueError):
            RigidTransform(refl, np.zeros(3))

    def test_box_invariants(self):
        with pytest.raises(ValueError):
            Box3D(center=(0, 0, 0), size=(1, 0, 1), yaw=0.0)
        box = Box3D(center=(0, 0, 0), size=(1, 1, 1), yaw=3 * math.pi)
        assert -math.pi <= box.yaw < math.pi
        assert box.yaw == pytest.approx(wrap_angle(3 * math.pi))

    def test_box7_round_trip(self):
        box = make_box(yaw=0.7)
        assert Box3D.from_box7(box.as_box7()) == box

    def test_transform_inverse_compose(self):
        rng = np.random.default_rng(0)
        t = RigidTransform.rotation_z(0.8).compose(
            RigidTransform(np.eye(3), np.array([1.0, -2.0, 0.5]))
        )
        pts = rng.normal(size=(10, 3))
        back = t.inverse().apply(t.apply(pts))
        np.testing.assert_allclose(back, pts, atol=1e-12)


class TestBoxCorners:
    def test_unit_cube_at_origin(self):
        corners = box_corners(Box3D(center=(0, 0, 0), size=(1, 1, 1), yaw=0.0))
        assert corners.shape == (8, 3)
        np.testing.assert_allclose(np.sort(np.unique(np.abs(corners))), [0.5])

    def test_quarter_turn_swaps_extents(self):
        corners = box_corners(Box3D(center=(0, 0, 0), size=(2, 1, 1), yaw=math.pi / 2))
        assert corners[:, 0].max() == pytest.approx(0.5)
        assert corners[:, 1].max() == pytest.approx(1.0)

    def test_yaw_rotation_matches_explicit_oracle(self):
        # Oracle: 2x2 rotation applied to every half-extent combination.
        yaw = math.pi / 4
        size = (2.0, 1.0, 1.0)
        corners = box_corners(Box3D(center=(0, 0, 0), size=size, yaw=yaw))
        c, s = math.cos(yaw), math.sin(yaw)
        expected_xy = set()
        for sx in (+1, -1):
            for sy in (+1, -1):
                x, y = sx * size[0] / 2, sy * size[1] / 2
                expected_xy.add((round(c * x - s * y, 12), round(s * x + c * y, 12)))
        got_xy = {(round(x, 12), round(y, 12)) for x, y in corners[:, :2]}
        assert got_xy == expected_xy

    def test_corner_mean_is_center(self):
        box = make_box(center=(3.0, -2.0, 1.5), yaw=1.1)
        np.testing.assert_allclose(box_corners(box).mean(axis=0), box.center, atol=1e-12)

    def test_bottom_face_ccw_from_above(self):
        corners = box_corners(Box3D(center=(0, 0, 0), size=(2, 1, 1), yaw=0.3))
        assert polygon_area(corners[:4, :2]) > 0  # shoelace positive = CCW
        np.testing.assert_allclose(corners[:4, 2], -0.5)
        np.testing.assert_allclose(corners[4:, 2], 0.5)


class TestProjection:
    def test_optical_axis_hits_principal_point(self, cam, identity_pose):
        uv, valid = project_points(np.array([[0.0, 0.0, 10.0]]), cam, identity_pose)
        np.testing.assert_allclose(uv[0], [cam.cx, cam.cy])
        assert valid[0]

    def test_point_behind_camera_invalid(self, cam, identity_pose):
        _, valid = project_points(np.array([[0.0, 0.0, -5.0]]), cam, identity_pose)
        assert not valid[0]

    def test_hand_evaluated_pinhole(self, identity_pose):
        # u = 500 * 1/4 + 320 = 445, v = 500 * 2/4 + 240 = 490
        cam = CameraIntrinsics(fx=500, fy=500, cx=320, cy=240, width=640, height=512)
        uv, valid = project_points(np.array([[1.0, 2.0, 4.0]]), cam, identity_pose)
        np.testing.assert_allclose(uv[0], [445.0, 490.0])
        assert valid[0]

    def test_out_of_image_is_invalid(self, cam, identity_pose):
        uv, valid = project_points(np.array([[1.0, 2.0, 4.0]]), cam, identity_pose)
        np.testing.assert_allclose(uv[0], [445.0, 490.0])
        assert not valid[0]  # v=490 >= height 480


class TestBackprojection:
    def test_principal_point_maps_to_axis(self, cam):
        np.testing.assert_allclose(backproject(cam.cx, cam.cy, 7.5, cam), [0.0, 0.0, 7.5])

    def test_inverse_of_projection_example(self, cam):
        np.testing.assert_allclose(backproject(445, 490, 4.0, cam), [1.0, 2.0, 4.0])

    def test_rejects_nonpositive_depth(self, cam):
        with pytest.raises(InvalidDepth):
            backproject(100, 100, 0.0, cam)
        with pytest.raises(InvalidDepth):
            backproject(100, 100, -2.0, cam)

    def test_project_backproject_round_trip(self, cam, identity_pose):
        rng = np.random.default_rng(7)
        for _ in range(200):
            u = rng.uniform(0, cam.width - 1e-9)
            v = rng.uniform(0, cam.height - 1e-9)
            d = rng.uniform(0.5, 60.0)
            point = backproject(u, v, d, cam)
            uv, valid = project_points(point[None, :], cam, identity_pose)
            assert valid[0]
            np.testing.assert_allclose(uv[0], [u, v], atol=1e-6)

    @given(
        u=st.floats(1e-3, 639.0),
        v=st.floats(1e-3, 479.0),
        d=st.floats(1e-3, 1e4),
        fx=st.floats(50.0, 5000.0),
        fy=st.floats(50.0, 5000.0),
    )
    def test_round_trip_property(self, u, v, d, fx, fy):
        # Pixels a hair inside the image: validity at the exact open boundary
        # is float-fragile by construction, the identity itself is not.
        cam = CameraIntrinsics(fx=fx, fy=fy, cx=320.0, cy=240.0, width=640, height=480)
        uv, valid = project_points(
            backproject(u, v, d, cam)[None, :], cam, RigidTransform.identity()
        )
        assert valid[0]
        np.testing.assert_allclose(uv[0], [u, v], atol=1e-6)


def _mask_oracle(box, cam, pose):
    """Independent rasterization: qhull vertex ordering + per-pixel half-plane scan."""
    corners = box_corners(box)
    pts_cam = pose.apply(corners)
    front = pts_cam[:, 2] > 1e-6
    z = pts_cam[front, 2]
    uv = np.stack(
        [cam.fx * pts_cam[front, 0] / z + cam.cx, cam.fy * pts_cam[front, 1] / z + cam.cy],
        axis=1,
    )
    hull = ConvexHull(uv)
    poly = uv[hull.vertices]  # qhull returns 2D hulls in CCW order
    bits = np.zeros((cam.height, cam.width), dtype=bool)
    for y in range(cam.height):
        for x in range(cam.width):
            inside = True
            for i in range(len(poly)):
                ax, ay = poly[i]
                bx, by = poly[(i + 1) % len(poly)]
                if (bx - ax) * (y - ay) - (by - ay) * (x - ax) < -1e-9:
                    inside = False
                    break
            bits[y, x] = inside
    return bits


class TestBoxToMask:
    def test_behind_camera_not_visible(self, cam, identity_pose):
        box = Box3D(center=(0, 0, -20.0), size=(2, 1, 1), yaw=0.0)
        with pytest.raises(NotVisible):
            box_to_mask(box, cam, identity_pose)

    def test_centered_box_mask_centroid(self, cam, identity_pose):
        mask = box_to_mask(Box3D(center=(0, 0, 12.0), size=(2, 1, 1), yaw=0.2), cam, identity_pose)
        ys, xs = np.nonzero(mask.bits)
        assert abs(xs.mean() - cam.cx) <= 1.0
        assert abs(ys.mean() - cam.cy) <= 1.0

    def test_matches_point_in_polygon_oracle(self, identity_pose):
        cam = CameraIntrinsics(fx=120, fy=120, cx=64, cy=48, width=128, height=96)
        boxes = [
            Box3D(center=(0.3, -0.2, 8.0), size=(2.0, 1.2, 1.4), yaw=0.6),
            Box3D(center=(-1.0, 0.5, 6.0), size=(1.5, 0.8, 2.0), yaw=-1.1),
            Box3D(center=(0.0, 0.0, 5.0), size=(1.0, 1.0, 1.0), yaw=0.25),
        ]
        for box in boxes:
            mask = box_to_mask(box, cam, identity_pose)
            oracle = _mask_oracle(box, cam, identity_pose)
            np.testing.assert_array_equal(mask.bits, oracle)

    def test_invariant_under_full_turn(self, cam, identity_pose):
        base = Box3D(center=(0.5, 0.2, 10.0), size=(2, 1, 1), yaw=0.4)
        turned = Box3D(center=base.center, size=base.size, yaw=0.4 + 2 * math.pi)
        a = box_to_mask(base, cam, identity_pose)
        b = box_to_mask(turned, cam, identity_pose)
        np.testing.assert_array_equal(a.bits, b.bits)

    def test_frame_composition_consistency(self, cam, sensor_pose):
        # Rotating the box by theta about +z and the extrinsics by -theta gives
        # the same mask up to 1 px of rasterization at the hull boundary.
        theta = 0.37
        box = Box3D(center=(12.0, 1.0, -0.5), size=(2.5, 1.2, 1.5), yaw=0.3)
        rot = RigidTransform.rotation_z(theta)
        box_rotated = Box3D(
            center=tuple(rot.apply(np.array(box.center))),
            size=box.size,
            yaw=box.yaw + theta,
        )
        pose_rotated = sensor_pose.compose(RigidTransform.rotation_z(-theta))
        mask_a = box_to_mask(box_rotated, cam, pose_rotated)
        mask_b = box_to_mask(box, cam, sensor_pose)
        disagreement = mask_a.bits ^ mask_b.bits
        # Confined to the rasterization boundary: every disagreeing pixel has a
        # neighbor with the opposite value in both masks.
        from scipy import ndimage

        boundary = mask_b.bits ^ ndimage.binary_erosion(mask_b.bits)
        boundary |= ndimage.binary_dilation(boundary)
        assert not (disagreement & ~boundary).any()


class TestPolygonHelpers:
    def test_convex_hull_ccw_and_minimal(self):
        pts = np.array([[0, 0], [2, 0], [2, 2], [0, 2], [1, 1], [0.5, 0.5]])
        hull = convex_hull(pts)
        assert len(hull) == 4
        assert polygon_area(hull) == pytest.approx(4.0)

    def test_clip_partial_overlap(self):
        square = np.array([[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]])
        clipped = clip_polygon_to_rect(square, 0.0, 0.0, 5.0, 5.0)
        assert polygon_area(clipped) == pytest.approx(1.0)

    def test_clip_disjoint_is_empty(self):
        square = np.array([[-3.0, -3.0], [-2.0, -3.0], [-2.0, -2.0], [-3.0, -2.0]])
        assert len(clip_polygon_to_rect(square, 0.0, 0.0, 5.0, 5.0)) == 0

    def test_mask_bounding_rect(self):
        bits = np.zeros((10, 12), dtype=bool)
        bits[3:5, 6:9] = True
        assert PixelMask(bits).bounding_rect() == (6, 3, 9, 5)
