"""Scene manifests, instance-database persistence, candidate logs, run configuration."""

from __future__ import annotations

import base64
import hashlib
import json
import math
import os
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .analytics import SCHEMA_ID, CandidateRecord
from .compose import Annotation, InstanceAsset, RgbCutout, SceneSample
from .errors import ConfigError, VeriaError
from .geometry import Box3D, CameraIntrinsics, RigidTransform
from .placement import PlacementRegion, SizePrior
from .pointcloud import SENSOR_PRESETS, PointCloud, RangeImage, SensorSpec


class ParseError(VeriaError):
    """Manifest or config file failed to parse."""


class MissingAsset(VeriaError):
    """A file referenced by a manifest or asset id does not exist."""


# ---------------------------------------------------------------------------
# Point cloud and range image binary formats (little-endian f32 throughout).


def write_cloud(path, cloud: PointCloud, frame: str = "sensor", sensor_spec_id: str = "") -> None:
    """16 bytes/point (x, y, z, intensity) plus a JSON sidecar."""
    path = Path(path)
    records = np.zeros((len(cloud), 4), dtype="<f4")
    records[:, :3] = cloud.points
    if cloud.intensity is not None:
        records[:, 3] = cloud.intensity
    path.write_bytes(records.tobytes())
    sidecar = {
        "count": len(cloud),
        "frame": frame,
        "sensor_spec_id": sensor_spec_id,
        "has_intensity": cloud.intensity is not None,
    }
    Path(str(path) + ".json").write_text(json.dumps(sidecar, sort_keys=True) + "\n", "utf-8")


def read_cloud(path) -> tuple[PointCloud, dict]:
    path = Path(path)
    if not path.exists():
        raise MissingAsset(f"cloud file {path} does not exist")
    sidecar_path = Path(str(path) + ".json")
    if not sidecar_path.exists():
        raise MissingAsset(f"cloud sidecar {sidecar_path} does not exist")
    sidecar = json.loads(sidecar_path.read_text("utf-8"))
    raw = np.frombuffer(path.read_bytes(), dtype="<f4").reshape(-1, 4)
    if len(raw) != sidecar["count"]:
        raise ParseError(f"cloud {path}: sidecar count {sidecar['count']} != {len(raw)} records")
    intensity = raw[:, 3].astype(np.float64) if sidecar.get("has_intensity") else None
    return PointCloud(points=raw[:, :3].astype(np.float64), intensity=intensity), sidecar


def write_range_image(path, ri: RangeImage) -> None:
    payload = {
        "rows": ri.rows,
        "cols": ri.cols,
        "range_f32_le": base64.b64encode(ri.range.astype("<f4").tobytes()).decode("ascii"),
        "intensity_f32_le": (
            base64.b64encode(ri.intensity.astype("<f4").tobytes()).decode("ascii")
            if ri.intensity is not None
            else None
        ),
        "valid_bitset": base64.b64encode(
            np.packbits(ri.valid.ravel(), bitorder="little").tobytes()
        ).decode("ascii"),
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True) + "\n", "utf-8")


def read_range_image(path) -> RangeImage:
    payload = json.loads(Path(path).read_text("utf-8"))
    rows, cols = payload["rows"], payload["cols"]
    rng = np.frombuffer(base64.b64decode(payload["range_f32_le"]), dtype="<f4")
    rng = rng.reshape(rows, cols).astype(np.float64)
    valid = np.unpackbits(
        np.frombuffer(base64.b64decode(payload["valid_bitset"]), dtype=np.uint8),
        count=rows * cols,
        bitorder="little",
    ).astype(bool).reshape(rows, cols)
    intensity = None
    if payload.get("intensity_f32_le"):
        intensity = np.frombuffer(base64.b64decode(payload["intensity_f32_le"]), dtype="<f4")
        intensity = intensity.reshape(rows, cols).astype(np.float64)
    return RangeImage(range=rng, valid=valid, intensity=intensity)


def write_image(path, pixels: np.ndarray) -> None:
    Image.fromarray(np.asarray(pixels, dtype=np.uint8)).save(path, format="PNG")


def read_image(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise MissingAsset(f"image file {path} does not exist")
    return np.asarray(Image.open(path).convert("RGB"))


# ---------------------------------------------------------------------------
# Scene manifests.


@dataclass(eq=False)
class SceneManifest:
    scene_id: str
    image_path: Path
    cloud_path: Path
    cam: CameraIntrinsics
    pose: RigidTransform
    sensor_spec_id: str
    ground_height: float
    existing_boxes: list[Annotation]


def load_manifest(path, sensor_registry: dict[str, SensorSpec] | None = None) -> SceneManifest:
    """Parse and validate one scene manifest; referenced files must exist."""
    path = Path(path)
    registry = sensor_registry if sensor_registry is not None else SENSOR_PRESETS
    try:
        payload = json.loads(path.read_text("utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"manifest {path}: {exc}") from exc
    try:
        calib = payload["calibration"]
        intr = calib["intrinsics"]
        cam = CameraIntrinsics(
            fx=float(intr["fx"]),
            fy=float(intr["fy"]),
            cx=float(intr["cx"]),
            cy=float(intr["cy"]),
            width=int(intr["width"]),
            height=int(intr["height"]),
        )
        extr = calib["extrinsics"]
        pose = RigidTransform(np.asarray(extr["rotation"], dtype=float), np.asarray(extr["translation"], dtype=float))
        boxes = [
            Annotation(category=b["category"], box=Box3D.from_box7(b["box7"]))
            for b in payload.get("existing_boxes", [])
        ]
        manifest = SceneManifest(
            scene_id=payload["scene_id"],
            image_path=(path.parent / payload["image"]).resolve(),
            cloud_path=(path.parent / payload["cloud"]).resolve(),
            cam=cam,
            pose=pose,
            sensor_spec_id=payload["sensor_spec_id"],
            ground_height=float(payload["ground_height"]),
            existing_boxes=boxes,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"manifest {path}: {exc}") from exc
    if manifest.sensor_spec_id not in registry:
        raise ParseError(f"manifest {path}: unknown sensor_spec_id {manifest.sensor_spec_id!r}")
    if not manifest.image_path.exists():
        raise MissingAsset(f"manifest {path}: image {manifest.image_path} missing")
    if not manifest.cloud_path.exists():
        raise MissingAsset(f"manifest {path}: cloud {manifest.cloud_path} missing")
    return manifest


def save_manifest(path, manifest: SceneManifest) -> None:
    path = Path(path)
    payload = {
        "scene_id": manifest.scene_id,
        "image": os.path.relpath(manifest.image_path, path.parent),
        "cloud": os.path.relpath(manifest.cloud_path, path.parent),
        "calibration": {
            "intrinsics": {
                "fx": manifest.cam.fx,
                "fy": manifest.cam.fy,
                "cx": manifest.cam.cx,
                "cy": manifest.cam.cy,
                "width": manifest.cam.width,
                "height": manifest.cam.height,
            },
            "extrinsics": {
                "rotation": manifest.pose.rotation.tolist(),
                "translation": manifest.pose.translation.tolist(),
            },
        },
        "sensor_spec_id": manifest.sensor_spec_id,
        "ground_height": manifest.ground_height,
        "existing_boxes": [
            {"category": ann.category, "box7": ann.box.as_box7()} for ann in manifest.existing_boxes
        ],
    }
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", "utf-8")


def load_scene(manifest: SceneManifest, sensor_registry: dict[str, SensorSpec] | None = None) -> SceneSample:
    registry = sensor_registry if sensor_registry is not None else SENSOR_PRESETS
    cloud, _ = read_cloud(manifest.cloud_path)
    return SceneSample(
        scene_id=manifest.scene_id,
        image=read_image(manifest.image_path),
        cloud=cloud,
        cam=manifest.cam,
        pose=manifest.pose,
        existing_boxes=list(manifest.existing_boxes),
        sensor=registry[manifest.sensor_spec_id],
        ground_height=manifest.ground_height,
    )


# ---------------------------------------------------------------------------
# Content-addressed instance-asset store.


def _asset_payload(asset: InstanceAsset) -> tuple[dict, bytes]:
    meta = {
        "category": asset.category,
        "subclass": asset.subclass,
        "box7": asset.box.as_box7(),
        "source_scene": asset.source_scene,
        "cutout_origin": list(asset.cutout.origin),
    }
    cloud_bytes = np.ascontiguousarray(asset.cloud.points.astype("<f8")).tobytes()
    if asset.cloud.intensity is not None:
        cloud_bytes += np.ascontiguousarray(asset.cloud.intensity.astype("<f8")).tobytes()
    blob = (
        json.dumps(meta, sort_keys=True).encode("utf-8")
        + b"\x00"
        + np.ascontiguousarray(asset.cutout.image).tobytes()
        + b"\x00"
        + np.packbits(asset.cutout.mask.ravel(), bitorder="little").tobytes()
        + b"\x00"
        + cloud_bytes
    )
    return meta, blob


def store_asset(asset: InstanceAsset, db_root) -> str:
    """Persist an asset under a content-addressed id; duplicates deduplicate."""
    db_root = Path(db_root)
    meta, blob = _asset_payload(asset)
    asset_id = hashlib.sha256(blob).hexdigest()[:16]
    asset_dir = db_root / asset_id
    if asset_dir.exists():
        return asset_id
    tmp_dir = db_root / f".tmp-{asset_id}-{os.getpid()}"
    tmp_dir.mkdir(parents=True, exist_ok=True)
    meta_out = dict(meta)
    meta_out["asset_id"] = asset_id
    (tmp_dir / "meta.json").write_text(json.dumps(meta_out, indent=2, sort_keys=True) + "\n", "utf-8")
    write_image(tmp_dir / "cutout.png", asset.cutout.image)
    write_image(
        tmp_dir / "cutout_mask.png",
        np.repeat(asset.cutout.mask[:, :, None].astype(np.uint8) * 255, 3, axis=2),
    )
    write_cloud(tmp_dir / "cloud.bin", asset.cloud)
    try:
        tmp_dir.rename(asset_dir)
    except OSError:
        # Another writer landed the same content first; keep theirs.
        for child in tmp_dir.iterdir():
            child.unlink()
        tmp_dir.rmdir()
    return asset_id


def load_asset(db_root, asset_id: str) -> InstanceAsset:
    asset_dir = Path(db_root) / asset_id
    meta_path = asset_dir / "meta.json"
    if not meta_path.exists():
        raise MissingAsset(f"asset {asset_id} not found under {db_root}")
    meta = json.loads(meta_path.read_text("utf-8"))
    image = read_image(asset_dir / "cutout.png")
    mask = read_image(asset_dir / "cutout_mask.png")[:, :, 0] >= 128
    cloud, _ = read_cloud(asset_dir / "cloud.bin")
    return InstanceAsset(
        asset_id=asset_id,
        category=meta["category"],
        subclass=meta["subclass"],
        cutout=RgbCutout(image=image, mask=mask, origin=tuple(meta["cutout_origin"])),
        cloud=cloud,
        box=Box3D.from_box7(meta["box7"]),
        source_scene=meta.get("source_scene", ""),
    )


def list_assets(db_root) -> list[str]:
    db_root = Path(db_root)
    if not db_root.exists():
        return []
    return sorted(p.name for p in db_root.iterdir() if (p / "meta.json").exists())


# ---------------------------------------------------------------------------
# Candidate log: JSON Lines with a schema header and atomic line appends.


class CandidateLog:
    """Append-only JSON Lines log; each append is a single O_APPEND write so
    concurrent workers never interleave within a line."""

    def __init__(self, path):
        self.path = Path(path)
        self._lock = threading.Lock()
        with self._lock:
            if not self.path.exists() or self.path.stat().st_size == 0:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                self.path.write_text(json.dumps({"schema": SCHEMA_ID}, sort_keys=True) + "\n", "utf-8")

    def append(self, record: CandidateRecord) -> None:
        line = json.dumps(record.to_json(), sort_keys=True) + "\n"
        fd = os.open(self.path, os.O_WRONLY | os.O_APPEND)
        try:
            os.write(fd, line.encode("utf-8"))
        finally:
            os.close(fd)

    def records(self) -> list[CandidateRecord]:
        from .analytics import read_records

        return list(read_records(self.path))

    def existing_ids(self) -> set[str]:
        return {record.candidate_id for record in self.records()}

    def rewrite_sorted(self) -> None:
        """Canonicalize the log: records sorted by candidate_id."""
        records = sorted(self.records(), key=lambda r: r.candidate_id)
        tmp = self.path.with_suffix(".tmp")
        with open(tmp, "w", encoding="utf-8") as f:
            f.write(json.dumps({"schema": SCHEMA_ID}, sort_keys=True) + "\n")
            for record in records:
                f.write(json.dumps(record.to_json(), sort_keys=True) + "\n")
        tmp.replace(self.path)


# ---------------------------------------------------------------------------
# Run configuration (defaults follow the reference evaluation setup).


DEFAULT_PRIORS = {
    "construction vehicle": SizePrior(length=(4.0, 9.0), width=(2.0, 3.2), height=(2.0, 4.0)),
    "motorcycle": SizePrior(length=(1.8, 2.4), width=(0.6, 1.0), height=(1.0, 1.6)),
    "bicycle": SizePrior(length=(1.5, 2.0), width=(0.5, 0.8), height=(0.9, 1.5)),
}

DEFAULT_MAX_PER_CLASS = {"construction vehicle": 7, "motorcycle": 5, "bicycle": 5}


@dataclass(frozen=True)
class StubScenario:
    """Target marginals for scripted stub runs.

    p_joint defaults to independence (p_sem * p_geo); setting it explicitly
    couples the scripted geometric outcomes to the semantic ones so logged
    joint yields can match observed (correlated) rates.
    """

    p_sem: float = 1.0
    p_geo: float = 1.0
    p_joint: float | None = None

    def __post_init__(self):
        for name in ("p_sem", "p_geo"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {v}")
        if self.p_joint is not None:
            eps = 1e-12  # float slack: p_sem + p_geo - 1 need not be exactly representable
            upper = min(self.p_sem, self.p_geo) + eps
            lower = max(0.0, self.p_sem + self.p_geo - 1.0) - eps
            if not lower <= self.p_joint <= upper:
                raise ConfigError(
                    f"p_joint {self.p_joint} outside the Frechet bounds [{lower:.4f}, {upper:.4f}]"
                )

    def joint(self) -> float:
        return self.p_sem * self.p_geo if self.p_joint is None else self.p_joint


@dataclass(eq=False)
class RunConfig:
    categories: list[str] = field(default_factory=lambda: list(DEFAULT_PRIORS))
    priors: dict[str, SizePrior] = field(default_factory=lambda: dict(DEFAULT_PRIORS))
    max_per_class: dict[str, int] = field(default_factory=lambda: dict(DEFAULT_MAX_PER_CLASS))
    region: PlacementRegion = field(
        default_factory=lambda: PlacementRegion(
            x_range=(6.0, 30.0), y_range=(-8.0, 8.0), z_ground=-1.8, yaw_range=(-math.pi, math.pi)
        )
    )
    lam: float = 0.5
    p_n: int = 5
    run_seed: int = 42
    candidates_per_category: int = 4
    band_px: int = 2
    tau_edge: float = 0.3
    r_ref: float = 10.0
    crop_margin: float = 0.5
    marker_width: int = 4
    min_visible_frac: float = 0.8
    min_mask_area: float = 32.0 * 32.0
    intensity_mode: str = "simulate"  # simulate | constant
    intensity_constant: float = 0.5
    free_z: bool = False
    max_new_tokens: int = 512
    max_in_flight: int = 16
    full_marginals: bool = True
    stub: StubScenario = field(default_factory=StubScenario)
    provider_url: str | None = None
    provider_timeout: float = 60.0
    provider_retries: int = 2
    sensors: dict[str, SensorSpec] = field(default_factory=dict)

    def __post_init__(self):
        if not 0 < self.lam <= 1:
            raise ConfigError(f"lambda must lie in (0, 1], got {self.lam}")
        if self.p_n < 1:
            raise ConfigError(f"p_n must be >= 1, got {self.p_n}")
        if self.intensity_mode not in ("simulate", "constant"):
            raise ConfigError(f"unknown intensity mode {self.intensity_mode!r}")
        missing = [c for c in self.categories if c not in self.priors]
        if missing:
            raise ConfigError(f"categories without size priors: {missing}")

    def sensor_registry(self) -> dict[str, SensorSpec]:
        registry = dict(SENSOR_PRESETS)
        registry.update(self.sensors)
        return registry

    def to_json(self) -> dict:
        return {
            "categories": list(self.categories),
            "priors": {
                c: {"length": list(p.length), "width": list(p.width), "height": list(p.height)}
                for c, p in self.priors.items()
            },
            "max_per_class": dict(self.max_per_class),
            "region": {
                "x_range": list(self.region.x_range),
                "y_range": list(self.region.y_range),
                "z_ground": self.region.z_ground,
                "yaw_range": list(self.region.yaw_range),
                "z_range": list(self.region.z_range) if self.region.z_range else None,
            },
            "lambda": self.lam,
            "p_n": self.p_n,
            "run_seed": self.run_seed,
            "candidates_per_category": self.candidates_per_category,
            "band_px": self.band_px,
            "tau_edge": self.tau_edge,
            "r_ref": self.r_ref,
            "crop_margin": self.crop_margin,
            "marker_width": self.marker_width,
            "min_visible_frac": self.min_visible_frac,
            "min_mask_area": self.min_mask_area,
            "intensity_mode": self.intensity_mode,
            "intensity_constant": self.intensity_constant,
            "free_z": self.free_z,
            "max_new_tokens": self.max_new_tokens,
            "max_in_flight": self.max_in_flight,
            "full_marginals": self.full_marginals,
            "stub": {"p_sem": self.stub.p_sem, "p_geo": self.stub.p_geo, "p_joint": self.stub.p_joint},
            "provider_url": self.provider_url,
            "provider_timeout": self.provider_timeout,
            "provider_retries": self.provider_retries,
            "sensors": {
                name: {
                    "elevations_deg": [math.degrees(e) for e in spec.elevations],
                    "azimuth_resolution_deg": math.degrees(spec.azimuth_resolution),
                    "fov_deg": [math.degrees(spec.fov[0]), math.degrees(spec.fov[1])],
                    "range_limits": list(spec.range_limits),
                }
                for name, spec in self.sensors.items()
            },
        }

    @staticmethod
    def from_json(payload: dict) -> "RunConfig":
        try:
            priors = {
                c: SizePrior(
                    length=tuple(p["length"]), width=tuple(p["width"]), height=tuple(p["height"])
                )
                for c, p in payload.get("priors", {}).items()
            }
            region_payload = payload.get("region")
            if region_payload:
                region = PlacementRegion(
                    x_range=tuple(region_payload["x_range"]),
                    y_range=tuple(region_payload["y_range"]),
                    z_ground=region_payload["z_ground"],
                    yaw_range=tuple(region_payload["yaw_range"]),
                    z_range=tuple(region_payload["z_range"]) if region_payload.get("z_range") else None,
                )
            else:
                region = RunConfig().region
            stub_payload = payload.get("stub", {})
            sensors = {
                name: SensorSpec(
                    elevations=[math.radians(e) for e in s["elevations_deg"]],
                    azimuth_resolution=math.radians(s["azimuth_resolution_deg"]),
                    fov=(math.radians(s["fov_deg"][0]), math.radians(s["fov_deg"][1])),
                    range_limits=tuple(s["range_limits"]),
                    name=name,
                )
                for name, s in payload.get("sensors", {}).items()
            }
            defaults = RunConfig()
            return RunConfig(
                categories=list(payload.get("categories", defaults.categories)),
                priors=priors or dict(DEFAULT_PRIORS),
                max_per_class=dict(payload.get("max_per_class", DEFAULT_MAX_PER_CLASS)),
                region=region,
                lam=payload.get("lambda", 0.5),
                p_n=payload.get("p_n", 5),
                run_seed=payload.get("run_seed", 42),
                candidates_per_category=payload.get("candidates_per_category", 4),
                band_px=payload.get("band_px", 2),
                tau_edge=payload.get("tau_edge", 0.3),
                r_ref=payload.get("r_ref", 10.0),
                crop_margin=payload.get("crop_margin", 0.5),
                marker_width=payload.get("marker_width", 4),
                min_visible_frac=payload.get("min_visible_frac", 0.8),
                min_mask_area=payload.get("min_mask_area", 32.0 * 32.0),
                intensity_mode=payload.get("intensity_mode", "simulate"),
                intensity_constant=payload.get("intensity_constant", 0.5),
                free_z=payload.get("free_z", False),
                max_new_tokens=payload.get("max_new_tokens", 512),
                max_in_flight=payload.get("max_in_flight", 16),
                full_marginals=payload.get("full_marginals", True),
                stub=StubScenario(
                    p_sem=stub_payload.get("p_sem", 1.0),
                    p_geo=stub_payload.get("p_geo", 1.0),
                    p_joint=stub_payload.get("p_joint"),
                ),
                provider_url=payload.get("provider_url"),
                provider_timeout=payload.get("provider_timeout", 60.0),
                provider_retries=payload.get("provider_retries", 2),
                sensors=sensors,
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid run config: {exc}") from exc

    @staticmethod
    def load(path) -> "RunConfig":
        try:
            payload = json.loads(Path(path).read_text("utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return RunConfig.from_json(payload)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n", "utf-8")
