"""Scene composition: collision-aware selection, depth-ordered RGB layering,
cross-modal occlusion removal, and label-box recovery."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .geometry import Box3D, CameraIntrinsics, NotVisible, RigidTransform, box_corners, projected_hull
from .geoverify import fit_obb_xy
from .pointcloud import PointCloud, SensorSpec, _spherical_bins

logger = logging.getLogger(__name__)


@dataclass(eq=False)
class RgbCutout:
    """Crop-sized RGB patch plus its object mask, anchored in scene pixels."""

    image: "np.ndarray"
    mask: np.ndarray
    origin: tuple[int, int]  # (left, top) in the scene image

    def __post_init__(self):
        img = np.asarray(self.image, dtype=np.uint8)
        mask = np.asarray(self.mask, dtype=bool)
        if img.ndim != 3 or img.shape[2] != 3:
            raise ValueError("cutout image must be (h, w, 3)")
        if mask.shape != img.shape[:2]:
            raise ValueError("cutout mask must match the image grid")
        self.image = img
        self.mask = mask
        self.origin = (int(self.origin[0]), int(self.origin[1]))


@dataclass(eq=False)
class InstanceAsset:
    """One verified synthesized instance: RGB cutout, sensor-frame cloud, label box."""

    asset_id: str
    category: str
    subclass: str
    cutout: RgbCutout
    cloud: PointCloud
    box: Box3D
    source_scene: str = ""

    def __post_init__(self):
        if len(self.cloud) == 0:
            raise ValueError("asset cloud must be non-empty")

    @property
    def center_range(self) -> float:
        return float(np.linalg.norm(self.box.center))


@dataclass(frozen=True)
class Annotation:
    category: str
    box: Box3D


@dataclass(eq=False)
class SceneSample:
    """Base scene: image, cloud, calibration, existing annotations, sensor."""

    scene_id: str
    image: np.ndarray
    cloud: PointCloud
    cam: CameraIntrinsics
    pose: RigidTransform  # sensor -> camera
    existing_boxes: list[Annotation]
    sensor: SensorSpec
    ground_height: float = 0.0

    def __post_init__(self):
        img = np.asarray(self.image, dtype=np.uint8)
        if img.ndim != 3 or img.shape[2] != 3:
            raise ValueError("scene image must be (h, w, 3)")
        self.image = img


def _rect_axes(box: Box3D) -> np.ndarray:
    c, s = np.cos(box.yaw), np.sin(box.yaw)
    return np.array([[c, s], [-s, c]])


def boxes_overlap(a: Box3D, b: Box3D) -> bool:
    """True iff the yaw-rotated XY rectangles intersect (separating-axis test over
    both boxes' edge normals) and the z intervals overlap. Touching counts."""
    za = (a.center[2] - a.size[2] / 2.0, a.center[2] + a.size[2] / 2.0)
    zb = (b.center[2] - b.size[2] / 2.0, b.center[2] + b.size[2] / 2.0)
    if za[1] < zb[0] or zb[1] < za[0]:
        return False
    corners_a = box_corners(a)[:4, :2]
    corners_b = box_corners(b)[:4, :2]
    for axis in np.vstack([_rect_axes(a), _rect_axes(b)]):
        proj_a = corners_a @ axis
        proj_b = corners_b @ axis
        if proj_a.max() < proj_b.min() or proj_b.max() < proj_a.min():
            return False
    return True


def select_instances(
    db: list[InstanceAsset],
    scene: SceneSample,
    max_per_class: dict[str, int],
    rng: np.random.Generator,
) -> list[InstanceAsset]:
    """Greedy collision-aware selection in seeded-shuffle order.

    An asset is accepted iff its box overlaps neither the scene's existing boxes
    nor any previously accepted asset, and its class count stays within the cap.
    """
    order = rng.permutation(len(db))
    selected: list[InstanceAsset] = []
    class_counts: dict[str, int] = {}
    for idx in order:
        asset = db[int(idx)]
        cap = max_per_class.get(asset.category, 0)
        if class_counts.get(asset.category, 0) >= cap:
            continue
        blocked = any(boxes_overlap(asset.box, ann.box) for ann in scene.existing_boxes)
        if not blocked:
            blocked = any(boxes_overlap(asset.box, taken.box) for taken in selected)
        if blocked:
            continue
        selected.append(asset)
        class_counts[asset.category] = class_counts.get(asset.category, 0) + 1
    return selected


def composite_rgb(scene: SceneSample, selected: list[InstanceAsset]) -> np.ndarray:
    """Paint cutouts far-to-near by box-center range; nearer assets overwrite."""
    out = scene.image.copy()
    h, w = out.shape[:2]
    for asset in sorted(selected, key=lambda a: -a.center_range):
        left, top = asset.cutout.origin
        ch, cw = asset.cutout.mask.shape
        x0, y0 = max(left, 0), max(top, 0)
        x1, y1 = min(left + cw, w), min(top + ch, h)
        if x0 >= x1 or y0 >= y1:
            continue
        sub_mask = asset.cutout.mask[y0 - top : y1 - top, x0 - left : x1 - left]
        sub_img = asset.cutout.image[y0 - top : y1 - top, x0 - left : x1 - left]
        region = out[y0:y1, x0:x1]
        region[sub_mask] = sub_img[sub_mask]
    return out


def remove_occluded(
    scene_cloud: PointCloud, inserted: list[InstanceAsset], sensor: SensorSpec
) -> tuple[PointCloud, np.ndarray]:
    """Carve scene points hidden behind inserted objects and merge the clouds.

    A scene point is removed when its (beam, azimuth-bin) cell holds an inserted
    point at strictly smaller range. Returns (merged cloud, removed-flags for the
    scene points). Merged order: surviving scene points, then inserted clouds in
    list order.
    """
    removed = np.zeros(len(scene_cloud), dtype=bool)
    if inserted and len(scene_cloud):
        cols = sensor.cols
        nearest = np.full(sensor.n_beams * cols, np.inf)
        for asset in inserted:
            row, col, r, ok = _spherical_bins(asset.cloud, sensor)
            if ok.any():
                np.minimum.at(nearest, row[ok] * cols + col[ok], r[ok])
        row, col, r, ok = _spherical_bins(scene_cloud, sensor)
        hit = ok & (nearest[row * cols + col] < r)
        removed[hit] = True

    survivors = scene_cloud.take(~removed)
    parts = [survivors] + [asset.cloud for asset in inserted]
    merged = _concat_clouds(parts)
    return merged, removed


def _concat_clouds(parts: list[PointCloud]) -> PointCloud:
    points = np.vstack([p.points for p in parts]) if parts else np.empty((0, 3))
    if all(p.intensity is not None for p in parts) and parts:
        intensity = np.concatenate([p.intensity for p in parts])
    else:
        intensity = None
    return PointCloud(points=points, intensity=intensity)


def recover_box(cloud: PointCloud) -> Box3D:
    """Recover the label box for a pseudo-LiDAR instance (shared OBB fit)."""
    return fit_obb_xy(cloud)


@dataclass(eq=False)
class ComposedScene:
    scene_id: str
    image: np.ndarray
    cloud: PointCloud
    labels: list[dict]
    selected: list[InstanceAsset]
    dropped_asset_ids: list[str] = field(default_factory=list)
    removed_scene_points: int = 0


def _warn_image_space_overlaps(scene: SceneSample, kept: list[InstanceAsset]) -> None:
    """Real labels stay untouched when inserted cutouts cover them in image
    space, but the situation is worth a warning in the run log."""
    for ann in scene.existing_boxes:
        try:
            hull = projected_hull(ann.box, scene.cam, scene.pose)
        except NotVisible:
            continue
        left, top = hull[:, 0].min(), hull[:, 1].min()
        right, bottom = hull[:, 0].max(), hull[:, 1].max()
        for asset in kept:
            al, at = asset.cutout.origin
            ah, aw = asset.cutout.mask.shape
            if al < right and al + aw > left and at < bottom and at + ah > top:
                logger.warning(
                    "scene %s: inserted instance %s overlaps existing %s annotation in image space",
                    scene.scene_id,
                    asset.asset_id,
                    ann.category,
                )


def compose_scene(
    scene: SceneSample,
    db: list[InstanceAsset],
    max_per_class: dict[str, int],
    rng: np.random.Generator,
    min_points: int = 5,
) -> ComposedScene:
    """Full per-scene composition: select, paint RGB, carve occlusions, emit labels.

    Existing real annotations keep their labels (synthetic: false). Inserted
    assets whose clouds end up with fewer than min_points points are dropped
    together with their labels.
    """
    selected = select_instances(db, scene, max_per_class, rng)
    kept = [a for a in selected if len(a.cloud) >= min_points]
    dropped = [a.asset_id for a in selected if len(a.cloud) < min_points]
    if dropped:
        logger.warning("scene %s: dropped low-point assets %s", scene.scene_id, dropped)
    _warn_image_space_overlaps(scene, kept)

    image = composite_rgb(scene, kept)
    merged, removed = remove_occluded(scene.cloud, kept, scene.sensor)

    labels: list[dict] = []
    for ann in scene.existing_boxes:
        labels.append(
            {"category": ann.category, "box7": ann.box.as_box7(), "instance_id": "", "synthetic": False}
        )
    for asset in kept:
        labels.append(
            {
                "category": asset.category,
                "box7": asset.box.as_box7(),
                "instance_id": asset.asset_id,
                "synthetic": True,
            }
        )
    return ComposedScene(
        scene_id=scene.scene_id,
        image=image,
        cloud=merged,
        labels=labels,
        selected=kept,
        dropped_asset_ids=dropped,
        removed_scene_points=int(removed.sum()),
    )
