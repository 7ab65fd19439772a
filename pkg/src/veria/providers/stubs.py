"""Deterministic stub providers; the full primary pipeline runs on these alone.

Stub outputs depend only on their explicit inputs (hashed through SHA-256), never
on invocation order, so parallel runs reproduce bit-identical results. Each stub
reports a fixed nominal latency so stub-mode candidate logs are byte-stable.
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass

import numpy as np

from ..geometry import Box3D, CameraIntrinsics, PixelMask, RigidTransform
from ..placement import CropRect
from ..prompts import SemanticVerdict, VerificationTurn, decide
from . import (
    DepthMap,
    DepthProvider,
    EmptySegmentation,
    ImageBuffer,
    InpaintProvider,
    SegmentProvider,
    SemanticVerifierProvider,
)

# Nominal per-call latencies (seconds) reported by the stubs.
NOMINAL_LATENCY = {
    "inpaint": 1.08,
    "verify": 2.36,
    "segment": 0.14,
    "depth": 0.39,
    "subclass": 2.36,
}


def _digest(*parts) -> bytes:
    h = hashlib.sha256()
    for part in parts:
        if isinstance(part, bytes):
            h.update(part)
        elif isinstance(part, str):
            h.update(part.encode("utf-8"))
        elif isinstance(part, int):
            h.update(struct.pack("<q", part))
        elif isinstance(part, float):
            h.update(struct.pack("<d", part))
        else:
            raise TypeError(f"unhashable stub input {type(part)}")
        h.update(b"\x1f")
    return h.digest()


def hash_uniforms(*parts, n: int = 1) -> list[float]:
    """n reproducible uniforms in [0, 1) derived from the hashed inputs."""
    out: list[float] = []
    counter = 0
    while len(out) < n:
        block = _digest(*parts, counter)
        for i in range(0, 32, 8):
            if len(out) >= n:
                break
            value = int.from_bytes(block[i : i + 8], "little")
            out.append(value / 2**64)
        counter += 1
    return out


def _rng_from(*parts) -> np.random.Generator:
    return np.random.default_rng(int.from_bytes(_digest(*parts)[:8], "little"))


class StubInpainter(InpaintProvider):
    """Fills the mask with a procedural texture keyed by the condition text and seed."""

    nominal_latency = NOMINAL_LATENCY["inpaint"]

    def inpaint(self, patch: ImageBuffer, condition: str, mask: PixelMask, seed: int = 0) -> ImageBuffer:
        if (mask.height, mask.width) != (patch.height, patch.width):
            raise ValueError("mask dimensions must match the patch")
        out = patch.pixels.copy()
        if mask.is_empty():
            return ImageBuffer(out)
        left, top, right, bottom = mask.bounding_rect()
        rng = _rng_from("inpaint", condition, seed)
        base = rng.integers(40, 216, size=3, dtype=np.int16)
        noise = rng.integers(-40, 41, size=(bottom - top, right - left, 3), dtype=np.int16)
        texture = (base + noise).astype(np.uint8)
        window = mask.bits[top:bottom, left:right]
        out[top:bottom, left:right][window] = texture[window]
        return ImageBuffer(out)


class StubSegmenter(SegmentProvider):
    """Returns the hint rectangle eroded by a fixed 2 px border."""

    EROSION_PX = 2
    nominal_latency = NOMINAL_LATENCY["segment"]

    def segment(self, image: ImageBuffer, region_hint: CropRect) -> PixelMask:
        if (
            region_hint.right <= 0
            or region_hint.bottom <= 0
            or region_hint.left >= image.width
            or region_hint.top >= image.height
        ):
            raise ValueError("hint rectangle lies outside the image")
        e = self.EROSION_PX
        left = max(region_hint.left + e, 0)
        top = max(region_hint.top + e, 0)
        right = min(region_hint.right - e, image.width)
        bottom = min(region_hint.bottom - e, image.height)
        if left >= right or top >= bottom:
            raise EmptySegmentation("hint too small to segment")
        bits = np.zeros((image.height, image.width), dtype=bool)
        bits[top:bottom, left:right] = True
        return PixelMask(bits)


@dataclass(frozen=True)
class PlaneScene:
    """Fronto-parallel plane at constant depth."""

    d0: float


@dataclass(frozen=True)
class RampScene:
    """Row-linear depth: d(v) = a + b * v."""

    a: float
    b: float


@dataclass(frozen=True, eq=False)
class BoxScene:
    """Analytic depth of an oriented box viewed from the camera.

    mode="solid" ray-casts the box and reports first-hit depth (only the visible
    surface, like a real depth estimator would see). mode="edges" scatters depth
    samples along all four vertical box edges instead; the backprojected cloud
    then spans the exact footprint with symmetric corner clusters, so the
    eigen-based box fit recovers the true parameters irrespective of viewpoint.
    Scripted scenarios use the edges mode, with `size_scale` shrinking or
    inflating the horizontal sizes to force verification failures. Rendering is
    restricted to `region` when given; everything outside stays invalid.
    """

    box: Box3D
    cam: CameraIntrinsics
    pose: RigidTransform  # sensor -> camera
    size_scale: float = 1.0
    region: CropRect | None = None
    mode: str = "solid"
    edge_samples: int = 64

    def render(self) -> DepthMap:
        if self.mode == "edges":
            return self._render_edges()
        if self.mode != "solid":
            raise ValueError(f"unknown render mode {self.mode!r}")
        return self._render_solid()

    def _bounds(self) -> tuple[int, int, int, int]:
        cam = self.cam
        if self.region is not None:
            return (
                max(self.region.left, 0),
                max(self.region.top, 0),
                min(self.region.right, cam.width),
                min(self.region.bottom, cam.height),
            )
        return 0, 0, cam.width, cam.height

    def _render_edges(self) -> DepthMap:
        cam = self.cam
        depth = np.zeros((cam.height, cam.width), dtype=np.float32)
        valid = np.zeros((cam.height, cam.width), dtype=bool)
        x0, y0, x1, y1 = self._bounds()
        if x0 >= x1 or y0 >= y1:
            return DepthMap(depth, valid)

        c, s = math.cos(self.box.yaw), math.sin(self.box.yaw)
        rot = np.array([[c, -s], [s, c]])
        half_x = 0.5 * self.box.size[0] * self.size_scale
        half_y = 0.5 * self.box.size[1] * self.size_scale
        corners_xy = np.array(
            [[+half_x, +half_y], [-half_x, +half_y], [-half_x, -half_y], [+half_x, -half_y]]
        ) @ rot.T + np.asarray(self.box.center[:2])
        heights = self.box.center[2] + 0.5 * self.box.size[2] * np.linspace(-1.0, 1.0, self.edge_samples)
        points = np.concatenate(
            [
                np.column_stack(
                    [np.full_like(heights, xy[0]), np.full_like(heights, xy[1]), heights]
                )
                for xy in corners_xy
            ]
        )
        pts_cam = self.pose.apply(points)
        z = pts_cam[:, 2]
        front = z > 1e-6
        us = np.round(cam.fx * pts_cam[front, 0] / z[front] + cam.cx).astype(int)
        vs = np.round(cam.fy * pts_cam[front, 1] / z[front] + cam.cy).astype(int)
        keep = (us >= x0) & (us < x1) & (vs >= y0) & (vs < y1)
        us, vs, zk = us[keep], vs[keep], z[front][keep]
        # Nearest sample wins per pixel.
        order = np.lexsort((zk, vs * cam.width + us))
        us, vs, zk = us[order], vs[order], zk[order]
        flat = vs * cam.width + us
        first = np.ones(len(flat), dtype=bool)
        first[1:] = flat[1:] != flat[:-1]
        depth[vs[first], us[first]] = zk[first].astype(np.float32)
        valid[vs[first], us[first]] = True
        return DepthMap(depth, valid)

    def _render_solid(self) -> DepthMap:
        cam = self.cam
        depth = np.zeros((cam.height, cam.width), dtype=np.float32)
        valid = np.zeros((cam.height, cam.width), dtype=bool)
        x0, y0, x1, y1 = self._bounds()
        if x0 >= x1 or y0 >= y1:
            return DepthMap(depth, valid)

        us, vs = np.meshgrid(np.arange(x0, x1, dtype=float), np.arange(y0, y1, dtype=float))
        # Camera-frame ray directions with unit z: the ray parameter equals depth.
        dirs_cam = np.stack(
            [(us - cam.cx) / cam.fx, (vs - cam.cy) / cam.fy, np.ones_like(us)], axis=-1
        )
        inv = self.pose.inverse()
        origin_s = inv.translation
        dirs_s = dirs_cam.reshape(-1, 3) @ inv.rotation.T

        c, s = math.cos(self.box.yaw), math.sin(self.box.yaw)
        to_local = np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])
        o_local = to_local @ (origin_s - np.asarray(self.box.center))
        d_local = dirs_s @ to_local.T
        half = 0.5 * np.asarray(self.box.size, dtype=float)
        half[:2] *= self.size_scale

        t_near = np.full(len(d_local), -np.inf)
        t_far = np.full(len(d_local), np.inf)
        for axis in range(3):
            d_axis = d_local[:, axis]
            o_axis = o_local[axis]
            with np.errstate(divide="ignore", invalid="ignore"):
                t1 = (-half[axis] - o_axis) / d_axis
                t2 = (half[axis] - o_axis) / d_axis
            lo, hi = np.minimum(t1, t2), np.maximum(t1, t2)
            parallel = np.abs(d_axis) < 1e-12
            inside = np.abs(o_axis) <= half[axis]
            lo = np.where(parallel, np.where(inside, -np.inf, np.inf), lo)
            hi = np.where(parallel, np.where(inside, np.inf, -np.inf), hi)
            t_near = np.maximum(t_near, lo)
            t_far = np.minimum(t_far, hi)

        t_hit = np.where(t_near > 1e-6, t_near, t_far)
        hit = (t_near <= t_far) & (t_hit > 1e-6) & np.isfinite(t_hit)
        block_depth = np.where(hit, t_hit, 0.0).reshape(us.shape)
        depth[y0:y1, x0:x1] = block_depth.astype(np.float32)
        valid[y0:y1, x0:x1] = hit.reshape(us.shape)
        return DepthMap(depth, valid)


class StubDepthEstimator(DepthProvider):
    """Emits a configurable analytic scene so downstream checks have closed forms."""

    nominal_latency = NOMINAL_LATENCY["depth"]

    def __init__(self, scene: PlaneScene | RampScene | BoxScene = PlaneScene(10.0)):
        self.scene = scene

    def estimate_depth(self, image: ImageBuffer) -> DepthMap:
        h, w = image.height, image.width
        if h == 0 or w == 0:
            raise ValueError("cannot estimate depth of a zero-size image")
        scene = self.scene
        if isinstance(scene, PlaneScene):
            return DepthMap(np.full((h, w), scene.d0, dtype=np.float32), np.ones((h, w), dtype=bool))
        if isinstance(scene, RampScene):
            rows = scene.a + scene.b * np.arange(h, dtype=np.float64)
            depth = np.repeat(rows[:, None], w, axis=1).astype(np.float32)
            return DepthMap(depth, np.ones((h, w), dtype=bool))
        if isinstance(scene, BoxScene):
            rendered = scene.render()
            if (rendered.height, rendered.width) != (h, w):
                raise ValueError("box scene camera does not match the image dimensions")
            return rendered
        raise TypeError(f"unknown analytic scene {type(scene)}")


class StubVerifier(SemanticVerifierProvider):
    """Draws verdicts deterministically from the call seed with configurable marginals."""

    nominal_latency = NOMINAL_LATENCY["verify"]

    def __init__(self, q1_yes_rate: float = 1.0, q2_yes_rate: float = 1.0, q3_none_rate: float = 1.0):
        for rate in (q1_yes_rate, q2_yes_rate, q3_none_rate):
            if not 0.0 <= rate <= 1.0:
                raise ValueError("rates must lie in [0, 1]")
        self.q1_yes_rate = q1_yes_rate
        self.q2_yes_rate = q2_yes_rate
        self.q3_none_rate = q3_none_rate

    @classmethod
    def from_sem_rate(cls, p_sem: float) -> "StubVerifier":
        """Distribute a target joint semantic pass rate evenly over the three checks."""
        r = p_sem ** (1.0 / 3.0)
        return cls(q1_yes_rate=r, q2_yes_rate=r, q3_none_rate=r)

    def verify_semantic(
        self,
        scene_marked: ImageBuffer,
        crop: ImageBuffer,
        turns: list[VerificationTurn],
        seed: int = 0,
    ) -> SemanticVerdict:
        if len(turns) != 4:
            raise ValueError("verification requires exactly four turns")
        return self._verdict(seed)

    def _verdict(self, seed: int) -> SemanticVerdict:
        u1, u2, u3, u4 = hash_uniforms("stub-verdict", seed, n=4)
        q1 = u1 < self.q1_yes_rate
        q2 = u2 < self.q2_yes_rate
        if u3 < self.q3_none_rate:
            severity = "none"
        else:
            severity = ("minor", "medium", "severe")[int(u4 * 3) % 3]
        comment = f"stub assessment (q1={q1}, q2={q2}, severity={severity})"
        return SemanticVerdict(
            q1_category_match=q1,
            q2_scene_plausible=q2,
            q3_artifact_severity=severity,
            q4_comment=comment,
        )

    def would_pass(self, seed: int) -> bool:
        """Predict the pass outcome for a seed without building images or turns."""
        return decide(self._verdict(seed)).passed
