"""FastAPI service implementing the provider wire protocol.

Request/response bodies validate against the machine-readable schemas shipped
with the `veria` package (the same files its client tests use). Base64 JSON and
multipart ingest are both accepted; responses are always base64 JSON.
"""

from __future__ import annotations

import json
import threading

import jsonschema
import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from veria.providers import wire

from .backends import build_backend
from .config import CAPABILITIES, GatewayConfig


def _error(status: int, code: str, message: str) -> JSONResponse:
    return JSONResponse(status_code=status, content={"error": {"code": code, "message": message}})


class BadRequest(Exception):
    def __init__(self, message: str):
        super().__init__(message)
        self.message = message


def _validate(schema_name: str, payload: dict) -> None:
    try:
        wire.validate_against(schema_name, payload)
    except jsonschema.ValidationError as exc:
        raise BadRequest(f"request does not match {schema_name}: {exc.message}") from exc


def _decode_image(data: str) -> np.ndarray:
    try:
        return wire.decode_image(data).pixels
    except Exception as exc:
        raise BadRequest(f"undecodable image payload: {exc}") from exc


def _decode_mask(data: str) -> np.ndarray:
    try:
        return wire.decode_mask(data).bits
    except Exception as exc:
        raise BadRequest(f"undecodable mask payload: {exc}") from exc


async def _normalized_payload(request: Request, image_fields: tuple[str, ...], json_fields: tuple[str, ...] = ()) -> dict:
    """Accept JSON bodies or multipart forms; normalize to the JSON payload shape.

    Multipart file parts carry raw PNG bytes for the named image fields; other
    scalar fields arrive as form strings (numbers parsed, `json_fields` parsed
    as embedded JSON).
    """
    import base64

    content_type = request.headers.get("content-type", "")
    if content_type.startswith("multipart/"):
        form = await request.form()
        payload: dict = {}
        for key, value in form.multi_items():
            if key in image_fields:
                raw = await value.read() if hasattr(value, "read") else str(value).encode()
                payload[key] = base64.b64encode(raw).decode("ascii")
            elif key in json_fields:
                try:
                    payload[key] = json.loads(str(value))
                except json.JSONDecodeError as exc:
                    raise BadRequest(f"field {key} is not valid JSON: {exc}") from exc
            else:
                text = str(value)
                payload[key] = int(text) if text.lstrip("-").isdigit() else text
        return payload
    try:
        return await request.json()
    except Exception as exc:
        raise BadRequest(f"body is neither JSON nor multipart: {exc}") from exc


def create_app(config: GatewayConfig | None = None, preload: bool = True) -> FastAPI:
    config = config or GatewayConfig()
    app = FastAPI(title="veria-gateway", docs_url=None, redoc_url=None)
    state = {"backends": {}, "loaded": False}
    # GPU-style backends are not reentrant: one serialized execution queue per model.
    locks = {name: threading.Lock() for name in CAPABILITIES}

    def load_models() -> None:
        for name in CAPABILITIES:
            state["backends"][name] = build_backend(name, config.models[name])
        state["loaded"] = True

    app.state.load_models = load_models
    app.state.config = config
    if preload:
        load_models()

    def backend_or_error(name: str):
        if not state["loaded"]:
            return None, _error(503, "unavailable", "models are still loading")
        backend = state["backends"].get(name)
        if backend is None:
            return None, _error(503, "unavailable", f"{name} backend is not loaded")
        return backend, None

    def auth_error(request: Request):
        if config.auth_token is None:
            return None
        header = request.headers.get("authorization", "")
        if header != f"Bearer {config.auth_token}":
            return _error(401, "unauthorized", "missing or invalid bearer token")
        return None

    @app.exception_handler(BadRequest)
    async def handle_bad_request(_request, exc: BadRequest):
        return _error(400, "bad_request", exc.message)

    @app.get("/v1/health")
    async def health():
        if not state["loaded"]:
            status = "loading"
            models = {name: config.models[name] for name in CAPABILITIES}
        else:
            missing = [name for name in CAPABILITIES if state["backends"].get(name) is None]
            status = "error" if missing else "ok"
            models = {
                name: (state["backends"][name].name if state["backends"].get(name) else "disabled")
                for name in CAPABILITIES
            }
        body = {"status": status, "models": models}
        wire.validate_against("health_response", body)
        return JSONResponse(content=body)

    @app.post("/v1/inpaint")
    async def inpaint(request: Request):
        if (denied := auth_error(request)) is not None:
            return denied
        backend, err = backend_or_error("inpainter")
        if err is not None:
            return err
        payload = await _normalized_payload(request, image_fields=("image", "mask"))
        payload.setdefault("max_side", 1024)
        _validate("inpaint_request", payload)
        image = _decode_image(payload["image"])
        mask = _decode_mask(payload["mask"])
        if mask.shape != image.shape[:2]:
            raise BadRequest("mask dimensions must match the image")
        with locks["inpainter"]:
            out = backend.run(image, mask, payload["prompt"], payload["seed"], payload["max_side"])
        body = {"image": wire.encode_image(wire.ImageBuffer(out))}
        wire.validate_against("inpaint_response", body)
        return JSONResponse(content=body)

    @app.post("/v1/segment")
    async def segment(request: Request):
        if (denied := auth_error(request)) is not None:
            return denied
        backend, err = backend_or_error("segmenter")
        if err is not None:
            return err
        payload = await _normalized_payload(request, image_fields=("image",), json_fields=("hint_rect",))
        _validate("segment_request", payload)
        image = _decode_image(payload["image"])
        rect = payload["hint_rect"]
        with locks["segmenter"]:
            mask = backend.run(image, (rect["left"], rect["top"], rect["right"], rect["bottom"]))
        if not mask.any():
            return _error(422, "empty_segmentation", "no object found in the hint region")
        body = {"mask": wire.encode_mask(wire.PixelMask(mask))}
        wire.validate_against("segment_response", body)
        return JSONResponse(content=body)

    @app.post("/v1/depth")
    async def depth(request: Request):
        if (denied := auth_error(request)) is not None:
            return denied
        backend, err = backend_or_error("depth")
        if err is not None:
            return err
        payload = await _normalized_payload(request, image_fields=("image",))
        _validate("depth_request", payload)
        image = _decode_image(payload["image"])
        with locks["depth"]:
            depth_map, valid = backend.run(image)
        from veria.providers import DepthMap

        body = wire.encode_depth_response(DepthMap(depth_map, valid))
        wire.validate_against("depth_response", body)
        return JSONResponse(content=body)

    @app.post("/v1/verify")
    async def verify(request: Request):
        if (denied := auth_error(request)) is not None:
            return denied
        backend, err = backend_or_error("verifier")
        if err is not None:
            return err
        payload = await _normalized_payload(
            request, image_fields=("scene_image", "crop_image"), json_fields=("turns",)
        )
        _validate("verify_request", payload)
        scene = _decode_image(payload["scene_image"])
        crop = _decode_image(payload["crop_image"])
        with locks["verifier"]:
            body = backend.run(
                scene, crop, payload["turns"], payload["seed"], payload["max_new_tokens"]
            )
        wire.validate_against("verify_response", body)
        return JSONResponse(content=body)

    return app


def serve(config: GatewayConfig | None = None) -> None:
    import uvicorn

    config = config or GatewayConfig()
    uvicorn.run(create_app(config), host="0.0.0.0", port=config.port)


def main() -> None:
    import argparse

    parser = argparse.ArgumentParser(description="Run the reference provider gateway.")
    parser.add_argument("--config", type=str, default=None, help="Path to a gateway config JSON.")
    parser.add_argument("--port", type=int, default=None)
    args = parser.parse_args()
    config = GatewayConfig.load(args.config) if args.config else GatewayConfig()
    if args.port is not None:
        config.port = args.port
    serve(config)


if __name__ == "__main__":
    main()
