"""Shared fixtures: cameras, poses, demo scenes, yield-fixture builders."""

import math

import pytest

from veria.analytics import CandidateRecord
from veria.fixtures import SENSOR_TO_CAMERA, demo_camera
from veria.geometry import Box3D, CameraIntrinsics, RigidTransform
from veria.geoverify import GeoVerdict
from veria.pointcloud import SensorSpec
from veria.prompts import SemanticVerdict, VerificationDecision


@pytest.fixture
def cam() -> CameraIntrinsics:
    return CameraIntrinsics(fx=500.0, fy=500.0, cx=320.0, cy=240.0, width=640, height=480)


@pytest.fixture
def identity_pose() -> RigidTransform:
    return RigidTransform.identity()


@pytest.fixture
def sensor_pose() -> RigidTransform:
    return SENSOR_TO_CAMERA


@pytest.fixture
def demo_cam() -> CameraIntrinsics:
    return demo_camera()


@pytest.fixture
def front_sensor() -> SensorSpec:
    """64-beam sensor restricted to the camera's forward FOV (fast rasters)."""
    return SensorSpec.uniform(
        64,
        (math.radians(-24.8), math.radians(2.0)),
        math.radians(0.1728),
        (math.radians(-60.0), math.radians(60.0)),
        (0.9, 120.0),
        name="64-beam-front",
    )


def make_record(
    candidate_id: str,
    sem_pass: bool,
    geo_pass: bool,
    category: str = "bicycle",
    ratios=(1.0, 1.0, 1.0),
    point_count: int = 50,
    provider_error: bool = False,
    timings=None,
) -> CandidateRecord:
    """Synthetic candidate record with consistent verdicts for yield fixtures."""
    if provider_error:
        return CandidateRecord(
            candidate_id=candidate_id,
            category=category,
            subclass="",
            box7=(0.0,) * 7,
            semantic=None,
            decision=None,
            geometric=None,
            point_count=0,
            timings=timings or {},
            status="provider_error",
        )
    verdict = SemanticVerdict(
        q1_category_match=sem_pass,
        q2_scene_plausible=True,
        q3_artifact_severity="none",
        q4_comment="fixture",
    )
    decision = VerificationDecision(
        passed=sem_pass, fail_reason="none" if sem_pass else "category"
    )
    geometric = GeoVerdict(
        passed=geo_pass,
        fitted_sizes=(2.0, 1.0, 1.0),
        size_ratios=tuple(ratios),
        point_count=point_count,
        fail_reason="none" if geo_pass else "size_x",
    )
    status = "pass" if (sem_pass and geo_pass) else ("fail_semantic" if not sem_pass else "fail_geometric")
    return CandidateRecord(
        candidate_id=candidate_id,
        category=category,
        subclass="fixture",
        box7=(10.0, 0.0, -1.0, 2.0, 1.0, 1.0, 0.0),
        semantic=verdict,
        decision=decision,
        geometric=geometric,
        point_count=point_count,
        timings=timings or {"inpaint": 1.08, "verify": 2.36, "segment": 0.14, "depth": 0.39},
        status=status,
    )


def table_fixture(n: int, n_sem: int, n_geo: int, n_joint: int, category: str = "bicycle"):
    """Records engineered to exact pass counts: joint first, then sem-only,
    geo-only, then dual fails."""
    assert n_joint <= min(n_sem, n_geo) and n_sem + n_geo - n_joint <= n
    records = []
    for i in range(n):
        if i < n_joint:
            sem, geo = True, True
        elif i < n_sem:
            sem, geo = True, False
        elif i < n_sem + (n_geo - n_joint):
            sem, geo = False, True
        else:
            sem, geo = False, False
        records.append(make_record(f"fix/{category}/{i:06d}", sem, geo, category=category))
    return records


def make_box(center=(10.0, 0.0, -1.0), size=(2.0, 1.0, 1.0), yaw=0.0) -> Box3D:
    return Box3D(center=center, size=size, yaw=yaw)
