"""The adapter service: two POST endpoints plus a readiness probe.

Wire protocol (field names fixed):

    POST /v1/complete  {"preamble": str, "input": str, "temperature"?: float}
                       -> 200 {"text": str}
    POST /v1/vqa       {"question": str, "image_ref": str|null, "image_b64": str|null}
                       -> 200 {"answer": str}
    GET  /healthz      -> 200 {"status": "ok"} once models are loaded

Every error is non-200 with a JSON body {"error": str}.  Requests are
validated by hand so malformed input yields 400 (not a framework 422).
Image refs resolve inside an allow-listed root; anything escaping it is
rejected.  The service keeps no per-client state.
"""

from __future__ import annotations

import argparse
import asyncio
import base64
import binascii
import sys
from dataclasses import dataclass, field
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.exceptions import HTTPException
from fastapi.responses import JSONResponse
from starlette.concurrency import run_in_threadpool

from .models import ECHO_MODEL_ID, load_generation_model, load_vqa_model

MAX_INLINE_IMAGE_BYTES = 8 * 1024 * 1024


@dataclass
class AdapterConfig:
    gen_model: str | None = None
    vqa_model: str | None = None
    device: str = "cpu"
    max_concurrency: int = 8
    images_root: Path = field(default_factory=Path.cwd)
    allow_url_images: bool = False

    def __post_init__(self):
        if not self.gen_model and not self.vqa_model:
            raise ValueError("configure at least one of gen_model / vqa_model")
        if self.max_concurrency < 1:
            raise ValueError("max_concurrency must be >= 1")
        self.images_root = Path(self.images_root)


class BadRequest(Exception):
    pass


def _require_str(body: dict, key: str) -> str:
    value = body.get(key)
    if not isinstance(value, str):
        raise BadRequest(f"field {key!r} must be a string")
    return value


def resolve_image_ref(config: AdapterConfig, ref: str):
    """Local path inside images_root, or a URL when those are allowed."""
    if ref.startswith(("http://", "https://")):
        if not config.allow_url_images:
            raise BadRequest("URL image refs are disabled; pass --allow-url-images")
        return ref
    root = config.images_root.resolve()
    path = (root / ref).resolve()
    if path != root and root not in path.parents:
        raise BadRequest(f"image_ref {ref!r} escapes the image root")
    return path


def decode_image_b64(blob: str) -> bytes:
    try:
        data = base64.b64decode(blob, validate=True)
    except (binascii.Error, ValueError) as err:
        raise BadRequest(f"image_b64 is not valid base64: {err}") from None
    if len(data) > MAX_INLINE_IMAGE_BYTES:
        raise BadRequest(
            f"inline image is {len(data)} bytes; the cap is {MAX_INLINE_IMAGE_BYTES}"
        )
    return data


def create_app(config: AdapterConfig) -> FastAPI:
    app = FastAPI(title="dsg-adapter", docs_url=None, redoc_url=None)
    gate = asyncio.Semaphore(config.max_concurrency)
    state = {"gen": None, "vqa": None, "ready": False}

    @app.on_event("startup")
    async def load_models():
        if config.gen_model:
            state["gen"] = load_generation_model(config.gen_model, config.device)
        if config.vqa_model:
            state["vqa"] = load_vqa_model(config.vqa_model, config.device)
        state["ready"] = True

    @app.exception_handler(BadRequest)
    async def bad_request(request: Request, exc: BadRequest):
        return JSONResponse(status_code=400, content={"error": str(exc)})

    @app.exception_handler(HTTPException)
    async def http_error(request: Request, exc: HTTPException):
        return JSONResponse(status_code=exc.status_code, content={"error": str(exc.detail)})

    @app.exception_handler(Exception)
    async def unhandled(request: Request, exc: Exception):
        return JSONResponse(status_code=500, content={"error": f"{type(exc).__name__}: {exc}"})

    async def read_body(request: Request) -> dict:
        try:
            body = await request.json()
        except Exception:
            raise BadRequest("request body must be a JSON object") from None
        if not isinstance(body, dict):
            raise BadRequest("request body must be a JSON object")
        return body

    @app.get("/healthz")
    async def healthz():
        if not state["ready"]:
            return JSONResponse(status_code=503, content={"error": "models still loading"})
        return {"status": "ok"}

    @app.post("/v1/complete")
    async def complete(request: Request):
        model = state["gen"]
        if model is None:
            raise BadRequest("generation role is not configured on this adapter")
        body = await read_body(request)
        preamble = _require_str(body, "preamble")
        input_text = _require_str(body, "input")
        temperature = body.get("temperature")
        if temperature is not None and not isinstance(temperature, (int, float)):
            raise BadRequest("field 'temperature' must be a number")
        async with gate:
            text = await run_in_threadpool(model.complete, preamble, input_text, temperature)
        return {"text": text}

    @app.post("/v1/vqa")
    async def vqa(request: Request):
        model = state["vqa"]
        if model is None:
            raise BadRequest("vqa role is not configured on this adapter")
        body = await read_body(request)
        question = _require_str(body, "question")
        if not question.strip():
            raise BadRequest("field 'question' must be non-empty")
        ref = body.get("image_ref")
        b64 = body.get("image_b64")
        if ref is None and b64 is None:
            raise BadRequest("provide image_ref or image_b64")
        if ref is not None and not isinstance(ref, str):
            raise BadRequest("field 'image_ref' must be a string")
        if b64 is not None and not isinstance(b64, str):
            raise BadRequest("field 'image_b64' must be a string")
        if b64 is not None:
            image = decode_image_b64(b64)
        else:
            image = resolve_image_ref(config, ref)
            if getattr(model, "needs_image_bytes", False) and isinstance(image, Path):
                if not image.is_file():
                    raise BadRequest(f"image_ref {ref!r} does not resolve to a file")
        async with gate:
            answer = await run_in_threadpool(model.answer, image, question)
        return {"answer": answer}

    return app


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="dsg-adapter", description=__doc__)
    parser.add_argument("--gen-model", dest="gen_model", help=f"model id or {ECHO_MODEL_ID!r}")
    parser.add_argument("--vqa-model", dest="vqa_model", help=f"model id or {ECHO_MODEL_ID!r}")
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8080)
    parser.add_argument("--images-root", dest="images_root", default=".")
    parser.add_argument("--max-concurrency", dest="max_concurrency", type=int, default=8)
    parser.add_argument("--allow-url-images", dest="allow_url_images", action="store_true")
    args = parser.parse_args(argv)
    try:
        config = AdapterConfig(
            gen_model=args.gen_model,
            vqa_model=args.vqa_model,
            device=args.device,
            max_concurrency=args.max_concurrency,
            images_root=Path(args.images_root),
            allow_url_images=args.allow_url_images,
        )
        # fail before binding the port if a model cannot load
        if config.gen_model:
            load_generation_model(config.gen_model, config.device)
        if config.vqa_model:
            load_vqa_model(config.vqa_model, config.device)
    except Exception as err:
        print(f"dsg-adapter: startup failure: {err}", file=sys.stderr)
        return 1

    import uvicorn

    uvicorn.run(create_app(config), host=args.host, port=args.port)
    return 0


if __name__ == "__main__":
    sys.exit(main())
