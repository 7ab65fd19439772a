"""Wire-format encoding for the provider HTTP protocol (JSON bodies, base64 payloads)."""

from __future__ import annotations

import base64
import io
import json
from functools import lru_cache
from importlib import resources

import numpy as np
from PIL import Image

from ..geometry import PixelMask
from ..placement import CropRect
from ..prompts import SemanticVerdict, VerificationTurn, normalize_severity, normalize_yes_no
from . import DepthMap, ImageBuffer

SCHEMA_NAMES = (
    "error_response",
    "health_response",
    "inpaint_request",
    "inpaint_response",
    "segment_request",
    "segment_response",
    "depth_request",
    "depth_response",
    "verify_request",
    "verify_response",
)


@lru_cache(maxsize=None)
def load_schema(name: str) -> dict:
    """Load one of the shared machine-readable endpoint schemas by name."""
    if name not in SCHEMA_NAMES:
        raise KeyError(f"unknown schema {name!r}")
    text = resources.files(__package__).joinpath("schemas", f"{name}.json").read_text("utf-8")
    return json.loads(text)


def validate_against(name: str, payload: dict) -> None:
    import jsonschema

    jsonschema.validate(instance=payload, schema=load_schema(name))


def encode_image(image: ImageBuffer) -> str:
    buf = io.BytesIO()
    Image.fromarray(image.pixels, mode="RGB").save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def decode_image(data: str) -> ImageBuffer:
    raw = base64.b64decode(data)
    img = Image.open(io.BytesIO(raw)).convert("RGB")
    return ImageBuffer(np.asarray(img))


def encode_mask(mask: PixelMask) -> str:
    buf = io.BytesIO()
    Image.fromarray(mask.bits.astype(np.uint8) * 255, mode="L").save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def decode_mask(data: str) -> PixelMask:
    raw = base64.b64decode(data)
    img = Image.open(io.BytesIO(raw)).convert("L")
    return PixelMask(np.asarray(img) >= 128)


def encode_f32(values: np.ndarray) -> str:
    """Row-major little-endian float32 payload."""
    return base64.b64encode(np.asarray(values, dtype="<f4").tobytes()).decode("ascii")


def decode_f32(data: str, shape: tuple[int, ...]) -> np.ndarray:
    raw = base64.b64decode(data)
    return np.frombuffer(raw, dtype="<f4").reshape(shape).copy()


def encode_bitset(bits: np.ndarray) -> str:
    """Packed little-bit-order bitset of a row-major boolean array."""
    packed = np.packbits(np.asarray(bits, dtype=bool).ravel(), bitorder="little")
    return base64.b64encode(packed.tobytes()).decode("ascii")


def decode_bitset(data: str, shape: tuple[int, ...]) -> np.ndarray:
    raw = np.frombuffer(base64.b64decode(data), dtype=np.uint8)
    n = int(np.prod(shape))
    return np.unpackbits(raw, count=n, bitorder="little").astype(bool).reshape(shape)


def encode_rect(rect: CropRect) -> dict:
    return {"left": rect.left, "top": rect.top, "right": rect.right, "bottom": rect.bottom}


def decode_rect(payload: dict) -> CropRect:
    return CropRect(
        left=int(payload["left"]),
        top=int(payload["top"]),
        right=int(payload["right"]),
        bottom=int(payload["bottom"]),
    )


def encode_depth_response(depth_map: DepthMap) -> dict:
    return {
        "depth_f32_le": encode_f32(depth_map.depth),
        "valid_mask": encode_bitset(depth_map.valid),
        "width": depth_map.width,
        "height": depth_map.height,
    }


def decode_depth_response(payload: dict) -> DepthMap:
    shape = (int(payload["height"]), int(payload["width"]))
    depth = decode_f32(payload["depth_f32_le"], shape)
    valid = decode_bitset(payload["valid_mask"], shape)
    return DepthMap(depth, valid)


def encode_turns(turns: list[VerificationTurn]) -> list[dict]:
    return [
        {
            "question": t.question,
            "history": [{"question": h.question, "answer": h.answer} for h in t.history],
        }
        for t in turns
    ]


def decode_verdict(payload: dict) -> SemanticVerdict:
    return SemanticVerdict(
        q1_category_match=normalize_yes_no(payload["q1"]),
        q2_scene_plausible=normalize_yes_no(payload["q2"]),
        q3_artifact_severity=normalize_severity(payload["q3"]),
        q4_comment=str(payload["q4"]),
    )


def encode_verdict(verdict: SemanticVerdict) -> dict:
    return {
        "q1": "yes" if verdict.q1_category_match else "no",
        "q2": "yes" if verdict.q2_scene_plausible else "no",
        "q3": verdict.q3_artifact_severity,
        "q4": verdict.q4_comment,
    }
