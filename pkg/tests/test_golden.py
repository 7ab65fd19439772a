"""Golden wire-protocol pairs: schema validity and stub reproducibility."""

import json
from importlib import resources

import pytest

from veria.prompts import build_verification_turns
from veria.providers import (
    PlaneScene,
    StubDepthEstimator,
    StubInpainter,
    StubSegmenter,
    StubVerifier,
)
from veria.providers import wire

GOLDEN_NAMES = ("inpaint", "segment", "depth", "verify", "health", "error")


def load_golden(name: str) -> dict:
    text = resources.files("veria.providers").joinpath("golden", f"{name}.json").read_text("utf-8")
    return json.loads(text)


@pytest.mark.parametrize("name", GOLDEN_NAMES)
def test_golden_pairs_validate_against_schemas(name):
    golden = load_golden(name)
    if "request" in golden:
        wire.validate_against(golden["request_schema"], golden["request"])
    wire.validate_against(golden["response_schema"], golden["response"])


def test_inpaint_golden_reproducible():
    golden = load_golden("inpaint")
    request = golden["request"]
    out = StubInpainter().inpaint(
        wire.decode_image(request["image"]),
        request["prompt"],
        wire.decode_mask(request["mask"]),
        seed=request["seed"],
    )
    assert wire.encode_image(out) == golden["response"]["image"]


def test_segment_golden_reproducible():
    golden = load_golden("segment")
    request = golden["request"]
    mask = StubSegmenter().segment(
        wire.decode_image(request["image"]), wire.decode_rect(request["hint_rect"])
    )
    assert wire.encode_mask(mask) == golden["response"]["mask"]


def test_depth_golden_reproducible():
    import base64

    golden = load_golden("depth")
    depth = StubDepthEstimator(PlaneScene(10.0)).estimate_depth(
        wire.decode_image(golden["request"]["image"])
    )
    assert wire.encode_depth_response(depth) == golden["response"]
    # 8x8 image: 64 little-endian f32 values.
    assert len(base64.b64decode(golden["response"]["depth_f32_le"])) == 256


def test_verify_golden_reproducible():
    golden = load_golden("verify")
    request = golden["request"]
    turns = build_verification_turns("golden/scene", "golden/crop")
    assert wire.encode_turns(turns) == request["turns"]
    verdict = StubVerifier(1.0, 1.0, 1.0).verify_semantic(
        wire.decode_image(request["scene_image"]),
        wire.decode_image(request["crop_image"]),
        turns,
        seed=request["seed"],
    )
    assert wire.encode_verdict(verdict) == golden["response"]
