"""Reference model backends: procedural, deterministic, dependency-free.

These stand in for real checkpoints so the service is functional and
schema-conformant out of the box. Each backend is selected by id through the
gateway config; deployments register heavier factories (diffusion inpainters,
VLM verifiers, SAM-style segmenters, monocular depth nets) under new ids.
"""

from __future__ import annotations

import hashlib
import struct

import numpy as np


def _seed_rng(*parts) -> np.random.Generator:
    h = hashlib.sha256()
    for part in parts:
        if isinstance(part, bytes):
            h.update(part)
        elif isinstance(part, str):
            h.update(part.encode("utf-8"))
        else:
            h.update(struct.pack("<q", int(part)))
        h.update(b"\x1e")
    return np.random.default_rng(int.from_bytes(h.digest()[:8], "little"))


class ReferenceInpainter:
    """Fills the masked region with the surrounding mean color plus seeded grain."""

    name = "reference-inpaint"

    def run(self, image: np.ndarray, mask: np.ndarray, prompt: str, seed: int, max_side: int) -> np.ndarray:
        out = image.copy()
        if not mask.any():
            return out
        outside = image[~mask]
        base = outside.mean(axis=0) if len(outside) else np.array([127.0, 127.0, 127.0])
        rng = _seed_rng(prompt, seed)
        grain = rng.integers(-24, 25, size=(int(mask.sum()), 3))
        out[mask] = np.clip(base + grain, 0, 255).astype(np.uint8)
        return out


class ReferenceSegmenter:
    """Luminance-contrast segmentation inside the hint, falling back to an
    eroded hint rectangle for textureless regions."""

    name = "reference-segment"
    EROSION_PX = 3

    def run(self, image: np.ndarray, hint: tuple[int, int, int, int]) -> np.ndarray:
        left, top, right, bottom = hint
        h, w = image.shape[:2]
        left, top = max(left, 0), max(top, 0)
        right, bottom = min(right, w), min(bottom, h)
        mask = np.zeros((h, w), dtype=bool)
        if left >= right or top >= bottom:
            return mask
        region = image[top:bottom, left:right].astype(np.float64).mean(axis=2)
        border = np.concatenate([region[0], region[-1], region[:, 0], region[:, -1]])
        deviation = np.abs(region - np.median(border))
        selected = deviation > max(8.0, deviation.std())
        if selected.mean() < 0.01:
            e = self.EROSION_PX
            selected = np.zeros_like(selected)
            selected[e:-e or None, e:-e or None] = True
        mask[top:bottom, left:right] = selected
        return mask


class ReferenceDepth:
    """Ground-plane style depth: rows below the horizon get h*f/(v - horizon)."""

    name = "reference-depth"
    CAMERA_HEIGHT = 1.6
    FOCAL_FRACTION = 0.8  # focal length as a fraction of image width

    def run(self, image: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        h, w = image.shape[:2]
        focal = self.FOCAL_FRACTION * w
        horizon = h / 2.0
        vs = np.arange(h, dtype=np.float64)
        below = vs > horizon + 1.0
        depth_rows = np.zeros(h, dtype=np.float64)
        depth_rows[below] = np.clip(
            self.CAMERA_HEIGHT * focal / (vs[below] - horizon), 0.5, 120.0
        )
        depth = np.repeat(depth_rows[:, None], w, axis=1).astype(np.float32)
        valid = np.repeat(below[:, None], w, axis=1)
        return depth, valid


class ReferenceVerifier:
    """Deterministic verdict from crop statistics; flags flat patches as artifacts."""

    name = "reference-verify"

    def run(
        self,
        scene: np.ndarray,
        crop: np.ndarray,
        turns: list[dict],
        seed: int,
        max_new_tokens: int,
    ) -> dict:
        gray = crop.astype(np.float64).mean(axis=2)
        contrast = float(gray.std())
        severity = "none" if contrast > 2.0 else "minor"
        comment = (
            f"reference verifier: crop mean {gray.mean():.1f}, contrast {contrast:.1f}, "
            f"{len(turns)} turns, seed {seed}"
        )
        return {
            "q1": "yes",
            "q2": "yes",
            "q3": severity,
            "q4": comment[: max(1, max_new_tokens)],
        }


# Backend registry: capability -> backend id -> factory. "disabled" yields no
# backend, leaving the capability unloaded (503 at the endpoint).
BACKENDS = {
    "inpainter": {"reference": ReferenceInpainter},
    "verifier": {"reference": ReferenceVerifier},
    "segmenter": {"reference": ReferenceSegmenter},
    "depth": {"reference": ReferenceDepth},
}


def build_backend(capability: str, backend_id: str):
    if backend_id == "disabled":
        return None
    try:
        factory = BACKENDS[capability][backend_id]
    except KeyError:
        raise ValueError(f"unknown backend {backend_id!r} for {capability}") from None
    return factory()
