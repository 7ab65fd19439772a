"""Synthetic desk-scale scene fixtures so the pipeline runs without any dataset."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .dataset_io import SceneManifest, save_manifest, write_cloud, write_image
from .geometry import CameraIntrinsics, RigidTransform
from .pointcloud import PointCloud

# Sensor frame: x forward, y left, z up. Camera frame: x right, y down, z forward.
SENSOR_TO_CAMERA = RigidTransform(
    np.array([[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]]), np.zeros(3)
)


def demo_camera(width: int = 640, height: int = 400) -> CameraIntrinsics:
    return CameraIntrinsics(fx=500.0, fy=500.0, cx=width / 2.0, cy=height / 2.0, width=width, height=height)


def demo_image(width: int = 640, height: int = 400, seed: int = 0) -> np.ndarray:
    """Gradient sky over textured ground; deterministic per seed."""
    rng = np.random.default_rng(seed)
    image = np.zeros((height, width, 3), dtype=np.uint8)
    horizon = height // 2
    sky = np.linspace(180, 120, horizon)[:, None]
    image[:horizon, :, 2] = (sky + 40).astype(np.uint8)
    image[:horizon, :, 1] = sky.astype(np.uint8)
    image[:horizon, :, 0] = (sky - 40).clip(0).astype(np.uint8)
    ground = rng.integers(70, 110, size=(height - horizon, width), dtype=np.uint8)
    image[horizon:, :, 0] = ground
    image[horizon:, :, 1] = ground
    image[horizon:, :, 2] = ground
    return image


def demo_ground_cloud(
    ground_z: float = -1.8,
    x_range: tuple[float, float] = (3.0, 40.0),
    y_range: tuple[float, float] = (-12.0, 12.0),
    step: float = 0.4,
    seed: int = 0,
) -> PointCloud:
    """Sensor-frame ground-plane grid with mild height jitter."""
    rng = np.random.default_rng(seed)
    xs = np.arange(x_range[0], x_range[1], step)
    ys = np.arange(y_range[0], y_range[1], step)
    gx, gy = np.meshgrid(xs, ys)
    gz = np.full_like(gx, ground_z) + rng.normal(0, 0.01, gx.shape)
    points = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)
    intensity = rng.uniform(0.2, 0.6, len(points))
    return PointCloud(points=points, intensity=intensity)


def write_demo_scene(
    directory,
    scene_id: str,
    sensor_spec_id: str = "32-beam",
    ground_height: float = -1.8,
    seed: int = 0,
) -> Path:
    """Materialize one synthetic scene (image, cloud, manifest); returns manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    cam = demo_camera()
    image_path = directory / f"{scene_id}.png"
    cloud_path = directory / f"{scene_id}.bin"
    write_image(image_path, demo_image(cam.width, cam.height, seed=seed))
    write_cloud(cloud_path, demo_ground_cloud(ground_z=ground_height, seed=seed), sensor_spec_id=sensor_spec_id)
    manifest = SceneManifest(
        scene_id=scene_id,
        image_path=image_path,
        cloud_path=cloud_path,
        cam=cam,
        pose=SENSOR_TO_CAMERA,
        sensor_spec_id=sensor_spec_id,
        ground_height=ground_height,
        existing_boxes=[],
    )
    manifest_path = directory / f"{scene_id}.json"
    save_manifest(manifest_path, manifest)
    return manifest_path


def write_demo_scenes(directory, count: int = 2, sensor_spec_id: str = "32-beam") -> list[Path]:
    return [
        write_demo_scene(directory, f"scene-{i:03d}", sensor_spec_id=sensor_spec_id, seed=i)
        for i in range(count)
    ]
