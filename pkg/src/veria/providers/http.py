"""HTTP client for the provider wire protocol."""

from __future__ import annotations

import requests

from ..geometry import PixelMask
from ..placement import CropRect
from ..prompts import MalformedResponse, SemanticVerdict, VerificationTurn
from . import (
    DepthMap,
    DepthProvider,
    EmptySegmentation,
    ImageBuffer,
    InpaintProvider,
    ProviderEndpoint,
    ProviderRejected,
    ProviderTimeout,
    ProviderUnavailable,
    SegmentProvider,
    SemanticVerifierProvider,
)
from . import wire

DEFAULT_MAX_NEW_TOKENS = 512

# Server error codes that map onto non-retryable rejection.
_REJECTED_CODES = {"rejected", "provider_rejected", "bad_request"}


class HttpProviderClient(
    InpaintProvider, SegmentProvider, DepthProvider, SemanticVerifierProvider
):
    """Speaks the gateway wire protocol; retries only transient failures.

    Retries happen on `ProviderUnavailable` and `ProviderTimeout` up to the
    endpoint's max_retries; a `ProviderRejected` is surfaced immediately.
    """

    def __init__(self, endpoint: ProviderEndpoint, session: requests.Session | None = None):
        self.endpoint = endpoint
        self._session = session or requests.Session()

    def _headers(self) -> dict:
        if self.endpoint.auth_token:
            return {"Authorization": f"Bearer {self.endpoint.auth_token}"}
        return {}

    def _post(self, path: str, payload: dict) -> dict:
        url = self.endpoint.base_url.rstrip("/") + path
        attempts = self.endpoint.max_retries + 1
        last_error: Exception | None = None
        for _ in range(attempts):
            try:
                response = self._session.post(
                    url, json=payload, timeout=self.endpoint.timeout, headers=self._headers()
                )
            except requests.Timeout as exc:
                last_error = ProviderTimeout(f"{path}: {exc}")
                continue
            except requests.RequestException as exc:
                last_error = ProviderUnavailable(f"{path}: {exc}")
                continue
            if response.status_code == 200:
                return response.json()
            error = self._decode_error(response)
            if isinstance(error, (ProviderUnavailable, ProviderTimeout)):
                last_error = error
                continue
            raise error
        assert last_error is not None
        raise last_error

    @staticmethod
    def _decode_error(response: requests.Response) -> Exception:
        code, message = "unknown", response.text[:200]
        try:
            body = response.json()
            code = body["error"]["code"]
            message = body["error"]["message"]
        except Exception:
            pass
        if code in _REJECTED_CODES or 400 <= response.status_code < 500:
            return ProviderRejected(f"{code}: {message}")
        return ProviderUnavailable(f"HTTP {response.status_code} {code}: {message}")

    def health(self) -> dict:
        url = self.endpoint.base_url.rstrip("/") + "/v1/health"
        try:
            response = self._session.get(url, timeout=self.endpoint.timeout, headers=self._headers())
        except requests.RequestException as exc:
            raise ProviderUnavailable(f"/v1/health: {exc}")
        if response.status_code != 200:
            raise ProviderUnavailable(f"/v1/health: HTTP {response.status_code}")
        return response.json()

    def inpaint(
        self, patch: ImageBuffer, condition: str, mask: PixelMask, seed: int = 0, max_side: int = 1024
    ) -> ImageBuffer:
        payload = {
            "image": wire.encode_image(patch),
            "mask": wire.encode_mask(mask),
            "prompt": condition,
            "seed": seed,
            "max_side": max_side,
        }
        body = self._post("/v1/inpaint", payload)
        image = wire.decode_image(body["image"])
        if (image.width, image.height) != (patch.width, patch.height):
            raise MalformedResponse("inpaint response dimensions differ from the input patch")
        return image

    def segment(self, image: ImageBuffer, region_hint: CropRect) -> PixelMask:
        payload = {"image": wire.encode_image(image), "hint_rect": wire.encode_rect(region_hint)}
        body = self._post("/v1/segment", payload)
        mask = wire.decode_mask(body["mask"])
        if mask.is_empty():
            raise EmptySegmentation("segmenter returned an empty mask")
        return mask

    def estimate_depth(self, image: ImageBuffer) -> DepthMap:
        body = self._post("/v1/depth", {"image": wire.encode_image(image)})
        return wire.decode_depth_response(body)

    def verify_semantic(
        self,
        scene_marked: ImageBuffer,
        crop: ImageBuffer,
        turns: list[VerificationTurn],
        seed: int = 0,
        max_new_tokens: int = DEFAULT_MAX_NEW_TOKENS,
    ) -> SemanticVerdict:
        payload = {
            "scene_image": wire.encode_image(scene_marked),
            "crop_image": wire.encode_image(crop),
            "turns": wire.encode_turns(turns),
            "seed": seed,
            "max_new_tokens": max_new_tokens,
        }
        body = self._post("/v1/verify", payload)
        return wire.decode_verdict(body)
