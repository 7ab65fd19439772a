"""Gateway configuration: port, backend selection per capability, device, auth."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

CAPABILITIES = ("inpainter", "verifier", "segmenter", "depth")

# Backend ids shipped with the reference gateway. Real deployments plug model
# checkpoints in by registering factories under new ids (see backends.BACKENDS);
# common choices per capability would be e.g. PowerPaint for inpainting,
# InternVL3 / Qwen3VL for verification, SAM2 for segmentation, and
# MoGe2 / UniDepth2 for depth.
BUILTIN_BACKENDS = ("reference", "disabled")


@dataclass
class GatewayConfig:
    port: int = 8321
    models: dict[str, str] = field(
        default_factory=lambda: {name: "reference" for name in CAPABILITIES}
    )
    device: str = "cpu"
    max_batch: int = 16
    auth_token: str | None = None

    def __post_init__(self):
        missing = [name for name in CAPABILITIES if name not in self.models]
        if missing:
            raise ValueError(f"models config missing capabilities: {missing}")

    @staticmethod
    def load(path) -> "GatewayConfig":
        payload = json.loads(Path(path).read_text("utf-8"))
        return GatewayConfig(
            port=payload.get("port", 8321),
            models={**{name: "reference" for name in CAPABILITIES}, **payload.get("models", {})},
            device=payload.get("device", "cpu"),
            max_batch=payload.get("max_batch", 16),
            auth_token=payload.get("auth_token"),
        )
