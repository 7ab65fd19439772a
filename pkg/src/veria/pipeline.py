"""Candidate pipeline and run orchestration: generate -> verify -> reconstruct ->
verify -> store, with per-candidate seeded streams and bounded provider concurrency."""

from __future__ import annotations

import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import compose as compose_mod
from .analytics import CandidateRecord
from .compose import InstanceAsset, RgbCutout, SceneSample
from .dataset_io import CandidateLog, RunConfig, StubScenario, load_manifest, load_scene, store_asset
from .geometry import NotVisible, PixelMask, box_to_mask
from .geoverify import GeoVerdict, GeoVerifyConfig, verify_geometry
from .placement import CropRect, candidate_rng, inpaint_crop, sample_box, visibility_gate
from .pointcloud import (
    DegenerateExtent,
    EmptyCloud,
    PointCloud,
    anchor_scale,
    backproject_region,
    contour_band_filter,
    from_range_image,
    simulate_intensity,
    to_range_image,
)
from .prompts import (
    ImplausibleDimensions,
    MalformedResponse,
    SubclassSpec,
    build_verification_turns,
    decide,
    parse_subclass_response,
    serialize_subclass_spec,
)
from .providers import (
    BoxScene,
    DepthProvider,
    EmptySegmentation,
    HttpProviderClient,
    ImageBuffer,
    InpaintProvider,
    ProviderEndpoint,
    ProviderRejected,
    ProviderTimeout,
    ProviderUnavailable,
    SegmentProvider,
    SemanticVerifierProvider,
    StubDepthEstimator,
    StubInpainter,
    StubSegmenter,
    StubVerifier,
)
from .providers.stubs import NOMINAL_LATENCY, hash_uniforms

MAX_PLACEMENT_TRIES = 32
SCRIPTED_FAIL_SCALE = 0.25
MARKER_COLOR = (255, 0, 0)

_PROVIDER_FAILURES = (
    ProviderUnavailable,
    ProviderRejected,
    ProviderTimeout,
    EmptySegmentation,
    MalformedResponse,
    ImplausibleDimensions,
)


# ---------------------------------------------------------------------------
# Subclass generation. The wire protocol has no text-completion endpoint, so the
# per-candidate subclass request is always served locally by this deterministic
# generator; the interface stays pluggable for VLM-backed implementations.

_SUBCLASS_VARIANTS: dict[str, list[tuple[str, str, str]]] = {
    "construction vehicle": [
        ("tracked excavator", "boom, stick and bucket on a tracked chassis with a rotating cab", "CAT 320"),
        ("wheel loader", "articulated chassis with a wide front bucket and large wheels", "Volvo L60H"),
        ("bulldozer", "low tracked hull with a broad front blade and rear ripper", "Komatsu D61"),
    ],
    "motorcycle": [
        ("sport bike", "faired fuel tank, clip-on bars, with a seated rider leaning forward", "Yamaha YZF-R7"),
        ("cruiser", "long low frame with swept-back handlebars, without a rider", "Honda Rebel 500"),
    ],
    "bicycle": [
        ("road bike", "thin-tube diamond frame with drop handlebars, without a rider", "Giant Contend 3"),
        ("city bike", "step-through frame with fenders and a basket, with a seated rider", "Gazelle CityGo"),
    ],
}


class SubclassProvider:
    """Interface for the subclass-specification capability."""

    def generate_subclass(self, category: str, prior, seed: int) -> str:
        raise NotImplementedError


class StubSubclassGenerator(SubclassProvider):
    """Deterministic subclass text in the canonical parseable form."""

    nominal_latency = NOMINAL_LATENCY["subclass"]

    def generate_subclass(self, category: str, prior, seed: int) -> str:
        variants = _SUBCLASS_VARIANTS.get(category, [(category, f"a typical {category}", "")])
        u = hash_uniforms("subclass", category, seed, n=1)[0]
        name, description, product = variants[int(u * len(variants)) % len(variants)]
        rider = None
        if category in ("bicycle", "motorcycle"):
            rider = "rider" in description and "without" not in description
        spec = SubclassSpec(
            category=category,
            subclass_name=name,
            description=description,
            size_prior=prior,
            reference_product=product,
            rider_included=rider,
        )
        return serialize_subclass_spec(spec)


# ---------------------------------------------------------------------------
# Provider wiring.


@dataclass
class ProviderSuite:
    inpainter: InpaintProvider
    segmenter: SegmentProvider
    verifier: SemanticVerifierProvider
    depth: DepthProvider | None
    subclass: SubclassProvider
    scripted_depth: bool = False
    scenario: StubScenario | None = None

    @staticmethod
    def stub(scenario: StubScenario | None = None) -> "ProviderSuite":
        scenario = scenario or StubScenario()
        return ProviderSuite(
            inpainter=StubInpainter(),
            segmenter=StubSegmenter(),
            verifier=StubVerifier.from_sem_rate(scenario.p_sem),
            depth=None,
            subclass=StubSubclassGenerator(),
            scripted_depth=True,
            scenario=scenario,
        )

    @staticmethod
    def remote(endpoint: ProviderEndpoint) -> "ProviderSuite":
        client = HttpProviderClient(endpoint)
        return ProviderSuite(
            inpainter=client,
            segmenter=client,
            verifier=client,
            depth=client,
            subclass=StubSubclassGenerator(),
            scripted_depth=False,
            scenario=None,
        )

    def geo_should_pass(self, seed: int) -> bool:
        """Scripted geometric outcome, coupled to the semantic outcome so that
        configured (p_sem, p_geo, p_joint) marginals are all reproduced."""
        assert self.scenario is not None
        p_s, p_g = self.scenario.p_sem, self.scenario.p_geo
        p_j = self.scenario.joint()
        if isinstance(self.verifier, StubVerifier) and self.verifier.would_pass(seed):
            threshold = p_j / p_s if p_s > 0 else 0.0
        else:
            threshold = (p_g - p_j) / (1.0 - p_s) if p_s < 1 else p_j
        return hash_uniforms("stub-geo", seed, n=1)[0] < threshold

    def depth_for(self, scene: SceneSample, box, region: CropRect, seed: int) -> DepthProvider:
        if not self.scripted_depth:
            assert self.depth is not None
            return self.depth
        # Edge-mode rendering reconstructs the exact box independent of viewing
        # angle, so the scripted pass/fail decision carries through verification.
        scale = 1.0 if self.geo_should_pass(seed) else SCRIPTED_FAIL_SCALE
        scene_model = BoxScene(
            box=box, cam=scene.cam, pose=scene.pose, size_scale=scale, region=region, mode="edges"
        )
        return StubDepthEstimator(scene_model)


class _Timer:
    """Records per-stage seconds; stubs report their fixed nominal latency so
    stub-mode logs are byte-stable across runs and worker counts."""

    def __init__(self):
        self.timings: dict[str, float] = {}

    def run(self, stage: str, provider, fn):
        t0 = time.perf_counter()
        result = fn()
        elapsed = time.perf_counter() - t0
        nominal = getattr(provider, "nominal_latency", None)
        self.timings[stage] = float(nominal) if nominal is not None else elapsed
        return result


# ---------------------------------------------------------------------------
# Image helpers.


def draw_marker(image: np.ndarray, rect: tuple[int, int, int, int], width: int = 4) -> np.ndarray:
    """Pure-red rectangle outline around the object region, on a copy."""
    out = image.copy()
    h, w = out.shape[:2]
    left, top, right, bottom = rect
    l0, t0 = max(left - width, 0), max(top - width, 0)
    r1, b1 = min(right + width, w), min(bottom + width, h)
    color = np.array(MARKER_COLOR, dtype=np.uint8)
    out[t0:b1, l0 : min(left, w)] = color
    out[t0:b1, max(right, 0) : r1] = color
    out[t0 : min(top, h), l0:r1] = color
    out[max(bottom, 0) : b1, l0:r1] = color
    return out


def _crop_pixels(image: np.ndarray, crop: CropRect) -> np.ndarray:
    return image[crop.top : crop.bottom, crop.left : crop.right]


def _sample_gray(image: np.ndarray, cloud: PointCloud, scene: SceneSample) -> np.ndarray:
    from .geometry import project_points

    uv, _ = project_points(cloud.points, scene.cam, scene.pose)
    us = np.clip(np.round(np.nan_to_num(uv[:, 0], nan=0.0)), 0, scene.cam.width - 1).astype(int)
    vs = np.clip(np.round(np.nan_to_num(uv[:, 1], nan=0.0)), 0, scene.cam.height - 1).astype(int)
    rgb = image[vs, us].astype(np.float64) / 255.0
    return 0.299 * rgb[:, 0] + 0.587 * rgb[:, 1] + 0.114 * rgb[:, 2]


# ---------------------------------------------------------------------------
# Candidate pipeline.


@dataclass
class CandidateResult:
    record: CandidateRecord
    asset: InstanceAsset | None = None


def _geo_fail(reason: str, point_count: int = 0) -> GeoVerdict:
    return GeoVerdict(
        passed=False,
        fitted_sizes=None,
        size_ratios=None,
        point_count=point_count,
        fail_reason=reason,
    )


def run_candidate(
    scene: SceneSample,
    category: str,
    candidate_id: str,
    candidate_index: int,
    config: RunConfig,
    providers: ProviderSuite,
) -> CandidateResult:
    """Run one candidate through sampling, inpainting, both verification stages.

    Every outcome produces a CandidateRecord; provider failures never raise.
    """
    seed = config.run_seed ^ candidate_index
    rng = candidate_rng(config.run_seed, candidate_index)
    timer = _Timer()

    def error_record(stage_note: str) -> CandidateResult:
        return CandidateResult(
            record=CandidateRecord(
                candidate_id=candidate_id,
                category=category,
                subclass=stage_note,
                box7=(0.0,) * 7,
                semantic=None,
                decision=None,
                geometric=None,
                point_count=0,
                timings=timer.timings,
                status="provider_error",
            )
        )

    # Subclass specification (local deterministic generator; see module note).
    try:
        text = timer.run(
            "subclass",
            providers.subclass,
            lambda: providers.subclass.generate_subclass(category, config.priors[category], seed),
        )
        subclass = parse_subclass_response(text, category)
    except _PROVIDER_FAILURES as exc:
        return error_record(f"error:subclass:{type(exc).__name__}")

    # Box placement; resample until the candidate clears the visibility gate.
    box = None
    for _ in range(MAX_PLACEMENT_TRIES):
        trial = sample_box(subclass.size_prior, config.region, rng, free_z=config.free_z)
        if visibility_gate(
            trial,
            scene.cam,
            scene.pose,
            min_area_frac=config.min_visible_frac,
            min_mask_area=config.min_mask_area,
        ):
            box = trial
            break
    if box is None:
        return error_record("error:placement:NoVisiblePose")

    try:
        mask = box_to_mask(box, scene.cam, scene.pose)
        crop = inpaint_crop(mask, config.crop_margin)
    except (NotVisible, ValueError) as exc:
        return error_record(f"error:mask:{type(exc).__name__}")

    # Inpaint the crop and paste it back into the scene.
    try:
        patch = ImageBuffer(_crop_pixels(scene.image, crop).copy())
        mask_crop = PixelMask(mask.bits[crop.top : crop.bottom, crop.left : crop.right])
        inpainted = timer.run(
            "inpaint",
            providers.inpainter,
            lambda: providers.inpainter.inpaint(patch, subclass.description, mask_crop, seed=seed),
        )
    except _PROVIDER_FAILURES as exc:
        return error_record(f"error:inpaint:{type(exc).__name__}")
    scene_aug = scene.image.copy()
    scene_aug[crop.top : crop.bottom, crop.left : crop.right] = inpainted.pixels

    # Semantic verification on the marked scene plus the close-up crop.
    scene_marked = draw_marker(scene_aug, mask.bounding_rect(), width=config.marker_width)
    crop_img = ImageBuffer(_crop_pixels(scene_aug, crop))
    turns = build_verification_turns(f"{candidate_id}/scene", f"{candidate_id}/crop")
    verdict = None
    for attempt in range(2):  # one retry on malformed answers
        try:
            verdict = timer.run(
                "verify",
                providers.verifier,
                lambda: providers.verifier.verify_semantic(
                    ImageBuffer(scene_marked), crop_img, turns, seed=seed
                ),
            )
            break
        except MalformedResponse:
            continue
        except _PROVIDER_FAILURES as exc:
            return error_record(f"error:verify:{type(exc).__name__}")
    if verdict is None:
        return error_record("error:verify:MalformedResponse")
    decision = decide(verdict)

    geometric: GeoVerdict | None = None
    cloud_final: PointCloud | None = None
    seg_bits: np.ndarray | None = None
    if decision.passed or config.full_marginals:
        try:
            geometric, cloud_final, seg_bits = _reconstruct_and_verify(
                scene, scene_aug, box, crop, mask.bounding_rect(), seed, config, providers, timer
            )
        except _PROVIDER_FAILURES as exc:
            return error_record(f"error:depth:{type(exc).__name__}")

    if not decision.passed:
        status = "fail_semantic"
    elif geometric is None or not geometric.passed:
        status = "fail_geometric"
    else:
        status = "pass"

    record = CandidateRecord(
        candidate_id=candidate_id,
        category=category,
        subclass=subclass.subclass_name,
        box7=tuple(box.as_box7()),
        semantic=verdict,
        decision=decision,
        geometric=geometric,
        point_count=geometric.point_count if geometric is not None else 0,
        timings=timer.timings,
        status=status,
    )

    asset = None
    if status == "pass" and cloud_final is not None and seg_bits is not None:
        cutout = RgbCutout(
            image=_crop_pixels(scene_aug, crop).copy(),
            mask=seg_bits[crop.top : crop.bottom, crop.left : crop.right],
            origin=(crop.left, crop.top),
        )
        recovered = compose_mod.recover_box(cloud_final)
        asset = InstanceAsset(
            asset_id=candidate_id,
            category=category,
            subclass=subclass.subclass_name,
            cutout=cutout,
            cloud=cloud_final,
            box=recovered,
            source_scene=scene.scene_id,
        )
    return CandidateResult(record=record, asset=asset)


def _reconstruct_and_verify(
    scene: SceneSample,
    scene_aug: np.ndarray,
    box,
    crop: CropRect,
    obj_bbox: tuple[int, int, int, int],
    seed: int,
    config: RunConfig,
    providers: ProviderSuite,
    timer: _Timer,
) -> tuple[GeoVerdict, PointCloud | None, np.ndarray | None]:
    """Pseudo-LiDAR reconstruction and geometric verification for one candidate."""
    seg_mask = timer.run(
        "segment",
        providers.segmenter,
        lambda: providers.segmenter.segment(ImageBuffer(scene_aug), crop),
    )
    # The scripted box render only needs to cover the object silhouette, so a
    # tight region (projected-box bbox + safety margin) keeps ray casting cheap.
    region = CropRect(
        left=max(obj_bbox[0] - 2, 0),
        top=max(obj_bbox[1] - 2, 0),
        right=min(obj_bbox[2] + 2, scene.cam.width),
        bottom=min(obj_bbox[3] + 2, scene.cam.height),
    )
    depth_provider = providers.depth_for(scene, box, region, seed)
    depth = timer.run(
        "depth", depth_provider, lambda: depth_provider.estimate_depth(ImageBuffer(scene_aug))
    )

    try:
        cloud_cam = backproject_region(depth, seg_mask, scene.cam)
        cloud_cam = contour_band_filter(cloud_cam, seg_mask, config.band_px, config.tau_edge)
        if len(cloud_cam) == 0:
            return _geo_fail("too_few_points"), None, seg_mask.bits
        inv = scene.pose.inverse()
        cloud_sensor = cloud_cam.transformed(inv.rotation, inv.translation)
        cloud_sensor = anchor_scale(cloud_sensor, box.size[2], origin=inv.translation)
        ri = to_range_image(cloud_sensor, scene.sensor)
        cloud_lidar = from_range_image(ri, scene.sensor)
        if len(cloud_lidar) == 0:
            return _geo_fail("too_few_points"), None, seg_mask.bits
    except (EmptyCloud, DegenerateExtent):
        return _geo_fail("too_few_points"), None, seg_mask.bits

    if config.intensity_mode == "constant":
        cloud_lidar = simulate_intensity(
            cloud_lidar, np.zeros(len(cloud_lidar)), constant=config.intensity_constant
        )
    else:
        gray = _sample_gray(scene_aug, cloud_lidar, scene)
        k = min(8, len(cloud_lidar) - 1)
        if k >= 1:
            cloud_lidar = simulate_intensity(cloud_lidar, gray, r_ref=config.r_ref, k=k)

    verdict = verify_geometry(cloud_lidar, box.size, GeoVerifyConfig(config.lam, config.p_n))
    return verdict, cloud_lidar, seg_mask.bits


# ---------------------------------------------------------------------------
# Run orchestration.


@dataclass
class GenerateSummary:
    candidates: int
    assets: int
    log_path: Path
    asset_dir: Path
    statuses: dict[str, int] = field(default_factory=dict)


def plan_candidates(config: RunConfig, scene_ids: list[str]) -> list[tuple[str, str, int, str]]:
    """Stable enumeration of (scene_id, category, global_index, candidate_id)."""
    plan = []
    index = 0
    for scene_id in scene_ids:
        for category in config.categories:
            for k in range(config.candidates_per_category):
                candidate_id = f"{scene_id}/{category.replace(' ', '_')}/{index:06d}"
                plan.append((scene_id, category, index, candidate_id))
                index += 1
    return plan


def generate(
    config: RunConfig,
    manifest_paths: list[Path],
    out_dir: Path,
    providers: ProviderSuite,
    workers: int = 1,
    store_assets: bool = True,
) -> GenerateSummary:
    """Run the full generation pipeline over all scenes and categories.

    Persists every candidate record regardless of outcome; only dual-pass
    candidates become assets (store_assets=False keeps measurement-only runs
    from paying asset-encoding costs). Rerunning over an existing log skips
    candidate ids already present. The log is canonically sorted by candidate
    id on completion.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    config.save(out_dir / "config.json")
    asset_dir = out_dir / "assets"
    asset_dir.mkdir(exist_ok=True)
    log = CandidateLog(out_dir / "candidates.jsonl")
    done = log.existing_ids()

    registry = config.sensor_registry()
    scenes: dict[str, SceneSample] = {}
    for path in manifest_paths:
        manifest = load_manifest(path, registry)
        scenes[manifest.scene_id] = load_scene(manifest, registry)

    plan = [
        task for task in plan_candidates(config, sorted(scenes)) if task[3] not in done
    ]
    flight = threading.Semaphore(max(1, config.max_in_flight))
    statuses: dict[str, int] = {}
    asset_count = 0
    lock = threading.Lock()

    def work(task):
        nonlocal asset_count
        scene_id, category, index, candidate_id = task
        with flight:
            result = run_candidate(scenes[scene_id], category, candidate_id, index, config, providers)
        log.append(result.record)
        with lock:
            statuses[result.record.status] = statuses.get(result.record.status, 0) + 1
        if result.asset is not None:
            if store_assets:
                store_asset(result.asset, asset_dir)
            with lock:
                asset_count += 1

    if workers <= 1:
        for task in plan:
            work(task)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(work, plan))

    log.rewrite_sorted()
    total = len(log.records())
    return GenerateSummary(
        candidates=total,
        assets=asset_count,
        log_path=log.path,
        asset_dir=asset_dir,
        statuses=statuses,
    )
