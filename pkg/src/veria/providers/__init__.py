"""Provider abstractions for the four generative capabilities, plus stubs and HTTP client."""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np

from ..errors import VeriaError
from ..geometry import PixelMask
from ..placement import CropRect
from ..prompts import SemanticVerdict, VerificationTurn


class ProviderUnavailable(VeriaError):
    """Backend unreachable or returned a retryable server-side failure."""


class ProviderRejected(VeriaError):
    """Backend refused the request (e.g. prompt policy); never retried."""


class ProviderTimeout(VeriaError):
    """Call exceeded the configured timeout."""


class EmptySegmentation(VeriaError):
    """Segmentation produced no pixels; signals generation failure."""


@dataclass(frozen=True)
class ProviderEndpoint:
    base_url: str
    timeout: float = 60.0
    max_retries: int = 2
    auth_token: str | None = None

    def __post_init__(self):
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")


@dataclass(eq=False)
class ImageBuffer:
    """Row-major RGB image, 8 bits per channel."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3:
            raise ValueError("pixels must have shape (height, width, 3)")
        self.pixels = px.astype(np.uint8, copy=False)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def copy(self) -> "ImageBuffer":
        return ImageBuffer(self.pixels.copy())

    def grayscale(self) -> np.ndarray:
        """Luma in [0, 1], ITU-R 601 weights."""
        px = self.pixels.astype(np.float64) / 255.0
        return 0.299 * px[:, :, 0] + 0.587 * px[:, :, 1] + 0.114 * px[:, :, 2]


@dataclass(eq=False)
class DepthMap:
    """Per-pixel metric depth with a validity flag."""

    depth: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        depth = np.asarray(self.depth, dtype=np.float32)
        valid = np.asarray(self.valid, dtype=bool)
        if depth.ndim != 2 or depth.shape != valid.shape:
            raise ValueError("depth and valid must be matching 2D arrays")
        flagged = depth[valid]
        if flagged.size and (not np.isfinite(flagged).all() or (flagged <= 0).any()):
            raise ValueError("valid pixels must have finite positive depth")
        self.depth = depth
        self.valid = valid

    @property
    def width(self) -> int:
        return self.depth.shape[1]

    @property
    def height(self) -> int:
        return self.depth.shape[0]


class InpaintProvider(ABC):
    @abstractmethod
    def inpaint(self, patch: ImageBuffer, condition: str, mask: PixelMask, seed: int = 0) -> ImageBuffer:
        """Fill the masked region conditioned on text; other pixels unchanged."""


class SegmentProvider(ABC):
    @abstractmethod
    def segment(self, image: ImageBuffer, region_hint: CropRect) -> PixelMask:
        """Extract the generated object region within the hint rectangle."""


class DepthProvider(ABC):
    @abstractmethod
    def estimate_depth(self, image: ImageBuffer) -> DepthMap:
        """Predict per-pixel metric depth for the full image."""


class SemanticVerifierProvider(ABC):
    @abstractmethod
    def verify_semantic(
        self,
        scene_marked: ImageBuffer,
        crop: ImageBuffer,
        turns: list[VerificationTurn],
        seed: int = 0,
    ) -> SemanticVerdict:
        """Run the sequential Q1-Q4 assessment and return the structured verdict."""


from .stubs import (  # noqa: E402
    BoxScene,
    PlaneScene,
    RampScene,
    StubDepthEstimator,
    StubInpainter,
    StubSegmenter,
    StubVerifier,
)
from .http import HttpProviderClient  # noqa: E402

__all__ = [
    "ProviderUnavailable",
    "ProviderRejected",
    "ProviderTimeout",
    "EmptySegmentation",
    "ProviderEndpoint",
    "ImageBuffer",
    "DepthMap",
    "InpaintProvider",
    "SegmentProvider",
    "DepthProvider",
    "SemanticVerifierProvider",
    "StubInpainter",
    "StubSegmenter",
    "StubDepthEstimator",
    "StubVerifier",
    "PlaneScene",
    "RampScene",
    "BoxScene",
    "HttpProviderClient",
]
