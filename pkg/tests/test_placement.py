"""Placement module: box sampling, visibility gate, inpaint crop derivation."""

import math

import numpy as np
import pytest

from veria.geometry import Box3D, PixelMask, projected_hull
from veria.placement import (
    CropRect,
    PlacementRegion,
    SizePrior,
    candidate_rng,
    inpaint_crop,
    sample_box,
    visibility_gate,
)


@pytest.fixture
def prior():
    return SizePrior(length=(1.5, 2.0), width=(0.5, 0.8), height=(0.9, 1.5))


@pytest.fixture
def region():
    return PlacementRegion(
        x_range=(0.0, 54.0), y_range=(-10.0, 10.0), z_ground=-1.8, yaw_range=(-math.pi, math.pi)
    )


class TestTypes:
    def test_prior_rejects_bad_bounds(self):
        with pytest.raises(ValueError):
            SizePrior(length=(2.0, 1.0), width=(0.5, 0.8), height=(0.9, 1.5))
        with pytest.raises(ValueError):
            SizePrior(length=(0.0, 1.0), width=(0.5, 0.8), height=(0.9, 1.5))

    def test_region_rejects_inverted_range(self):
        with pytest.raises(ValueError):
            PlacementRegion(x_range=(5.0, 1.0), y_range=(0, 1), z_ground=0.0, yaw_range=(0, 1))

    def test_crop_rect_invariants(self):
        with pytest.raises(ValueError):
            CropRect(left=5, top=0, right=5, bottom=10)
        with pytest.raises(ValueError):
            CropRect(left=-1, top=0, right=5, bottom=10)


class TestSampleBox:
    def test_degenerate_region_and_prior(self):
        prior = SizePrior(length=(2.0, 2.0), width=(1.0, 1.0), height=(1.5, 1.5))
        region = PlacementRegion(
            x_range=(10.0, 10.0), y_range=(-1.0, -1.0), z_ground=-2.0, yaw_range=(0.5, 0.5)
        )
        box = sample_box(prior, region, candidate_rng(0, 0))
        assert box == Box3D(center=(10.0, -1.0, -2.0 + 0.75), size=(2.0, 1.0, 1.5), yaw=0.5)

    def test_support_containment(self, prior, region):
        rng = candidate_rng(42, 1)
        for _ in range(10_000):
            box = sample_box(prior, region, rng)
            assert prior.length[0] <= box.size[0] <= prior.length[1]
            assert prior.width[0] <= box.size[1] <= prior.width[1]
            assert prior.height[0] <= box.size[2] <= prior.height[1]
            assert region.x_range[0] <= box.center[0] <= region.x_range[1]
            # Bottom rests on the ground plane.
            assert box.center[2] == pytest.approx(region.z_ground + box.size[2] / 2)

    def test_uniform_mean_within_3_sigma(self, prior, region):
        # c_x over [0, 54]: mean 27, se = (54 / sqrt(12)) / sqrt(n)
        rng = candidate_rng(42, 2)
        n = 10_000
        xs = [sample_box(prior, region, rng).center[0] for _ in range(n)]
        se = 54.0 / math.sqrt(12.0) / math.sqrt(n)
        assert abs(np.mean(xs) - 27.0) < 3 * se

    def test_deterministic_per_seed_and_index(self, prior, region):
        a = sample_box(prior, region, candidate_rng(42, 7))
        b = sample_box(prior, region, candidate_rng(42, 7))
        c = sample_box(prior, region, candidate_rng(42, 8))
        assert a == b
        assert a != c

    def test_stream_order_independent(self, prior, region):
        # Drawing candidate 5 after candidate 3 equals drawing it alone.
        rng3, rng5 = candidate_rng(1, 3), candidate_rng(1, 5)
        _ = sample_box(prior, region, rng3)
        box5 = sample_box(prior, region, rng5)
        assert box5 == sample_box(prior, region, candidate_rng(1, 5))

    def test_free_z_uses_z_range(self, prior):
        region = PlacementRegion(
            x_range=(10.0, 10.0),
            y_range=(0.0, 0.0),
            z_ground=-1.8,
            yaw_range=(0.0, 0.0),
            z_range=(-1.0, 3.0),
        )
        rng = candidate_rng(0, 1)
        zs = [sample_box(prior, region, rng, free_z=True).center[2] for _ in range(200)]
        assert min(zs) >= -1.0 and max(zs) <= 3.0
        assert max(zs) - min(zs) > 1.0


class TestVisibilityGate:
    def test_box_behind_camera_rejected(self, cam, identity_pose):
        assert not visibility_gate(Box3D((0, 0, -10.0), (2, 1, 1), 0.0), cam, identity_pose)

    def test_centered_box_accepted(self, cam, identity_pose):
        assert visibility_gate(Box3D((0, 0, 10.0), (2, 1.5, 1.5), 0.3), cam, identity_pose)

    def test_half_visible_box_rejected(self, cam, identity_pose):
        # Slide a box leftward until roughly half its hull leaves the image; the
        # pixel-count oracle on an extended canvas confirms the in-image fraction.
        box = Box3D((-6.45, 0.0, 10.0), (2, 1.5, 1.5), 0.0)
        hull = projected_hull(box, cam, identity_pose)
        inside = _pixel_fraction_inside(hull, cam.width, cam.height)
        assert 0.4 < inside < 0.6
        assert not visibility_gate(box, cam, identity_pose)

    def test_agrees_with_pixel_count_oracle(self, cam, identity_pose):
        from veria.geometry import NotVisible

        for x_center in np.linspace(-8.0, 0.0, 17):
            box = Box3D((float(x_center), 0.0, 10.0), (2, 1.5, 1.5), 0.0)
            try:
                hull = projected_hull(box, cam, identity_pose)
            except NotVisible:
                assert not visibility_gate(box, cam, identity_pose)
                continue
            frac = _pixel_fraction_inside(hull, cam.width, cam.height)
            if abs(frac - 0.8) < 0.02:
                continue  # rasterization noise near the threshold
            assert visibility_gate(box, cam, identity_pose) == (frac >= 0.8)


def _pixel_fraction_inside(hull, width, height) -> float:
    """Rasterize the hull on an extended canvas and count in-image pixels."""
    from veria.geometry import rasterize_convex

    pad = 1200
    shifted = hull + pad
    bits = rasterize_convex(shifted, width + 2 * pad, height + 2 * pad)
    total = bits.sum()
    inside = bits[pad : pad + height, pad : pad + width].sum()
    return inside / total if total else 0.0


class TestInpaintCrop:
    def test_full_image_mask(self):
        mask = PixelMask(np.ones((300, 400), dtype=bool))
        crop = inpaint_crop(mask)
        assert (crop.left, crop.top, crop.right, crop.bottom) == (0, 0, 400, 300)

    def test_centered_mask_rounds_to_256(self):
        bits = np.zeros((900, 900), dtype=bool)
        bits[400:500, 400:500] = True
        crop = inpaint_crop(PixelMask(bits), margin_frac=0.5)
        assert crop.width == 256 and crop.height == 256
        assert crop.contains(CropRect(400, 400, 500, 500))
        # Centered on the dilated rect center.
        assert (crop.left + crop.right) / 2 == pytest.approx(450, abs=1)

    def test_single_pixel_floor_64(self):
        bits = np.zeros((500, 500), dtype=bool)
        bits[250, 250] = True
        crop = inpaint_crop(PixelMask(bits))
        assert crop.width == 64 and crop.height == 64
        assert crop.left <= 250 < crop.right and crop.top <= 250 < crop.bottom

    def test_always_contains_mask_bbox(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            h, w = int(rng.integers(80, 400)), int(rng.integers(80, 400))
            bits = np.zeros((h, w), dtype=bool)
            y0 = int(rng.integers(0, h - 2))
            x0 = int(rng.integers(0, w - 2))
            y1 = int(rng.integers(y0 + 1, h))
            x1 = int(rng.integers(x0 + 1, w))
            bits[y0:y1, x0:x1] = True
            mask = PixelMask(bits)
            crop = inpaint_crop(mask)
            left, top, right, bottom = mask.bounding_rect()
            assert crop.contains(CropRect(left, top, right, bottom))
            assert 0 <= crop.left < crop.right <= w
            assert 0 <= crop.top < crop.bottom <= h

    def test_side_multiple_of_64_when_possible(self):
        bits = np.zeros((800, 800), dtype=bool)
        bits[100:220, 300:390] = True
        crop = inpaint_crop(PixelMask(bits))
        assert crop.width == crop.height
        assert crop.width % 64 == 0

    def test_empty_mask_rejected(self):
        with pytest.raises(ValueError):
            inpaint_crop(PixelMask(np.zeros((10, 10), dtype=bool)))
