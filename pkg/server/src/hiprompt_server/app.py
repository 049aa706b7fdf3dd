"""FastAPI application exposing /v1/denoise, /v1/caption, /v1/embed.

Responses either carry the endpoint's payload or the error envelope
{id, error_code, message} with error_code in {bad_request, shape_mismatch,
backend_unavailable}. Requests are stateless; the id is echoed verbatim and
never used for caching.
"""

from __future__ import annotations

import asyncio
from contextlib import asynccontextmanager

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .codec import CodecError, decode_f32_b64, decode_png_b64, encode_f32_b64
from .config import ServerConfig
from .stacks import (
    KNOWN_TEMPLATES,
    StackError,
    build_captioner,
    build_denoiser,
    build_embedder,
)


def _envelope(request_id, code: str, message: str, status: int) -> JSONResponse:
    return JSONResponse(
        status_code=status,
        content={"id": request_id, "error_code": code, "message": message},
    )


def _bad_request(request_id, message: str) -> JSONResponse:
    return _envelope(request_id, "bad_request", message, 400)


class _RequestError(Exception):
    def __init__(self, response: JSONResponse):
        self.response = response


def _field(body: dict, name: str, kind, request_id) -> object:
    if name not in body:
        raise _RequestError(_bad_request(request_id, f"missing field {name!r}"))
    value = body[name]
    if kind is not None and not isinstance(value, kind):
        raise _RequestError(_bad_request(request_id, f"field {name!r} has the wrong type"))
    return value


def create_app(config: ServerConfig | None = None) -> FastAPI:
    config = config or ServerConfig()
    denoiser = build_denoiser(
        config.denoiser, config.data_std, config.schedule_steps,
        config.beta_start, config.beta_end, config.schedule_kind,
    )
    captioner = build_captioner(config.captioner, config.caption_text)
    embedder = build_embedder(config.embedder)
    gate = asyncio.Semaphore(config.max_concurrency)

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        print(config.capability_line(), flush=True)
        yield

    app = FastAPI(title="hiprompt model server", lifespan=lifespan)

    async def _body(request: Request, request_id_holder: list) -> dict:
        try:
            body = await request.json()
        except Exception:
            raise _RequestError(_bad_request(None, "request body is not valid JSON"))
        if not isinstance(body, dict):
            raise _RequestError(_bad_request(None, "request body must be a JSON object"))
        request_id_holder.append(body.get("id"))
        return body

    @app.get("/healthz")
    async def healthz():
        return {"status": "ok", **config.capability()}

    @app.post("/v1/denoise")
    async def denoise(request: Request):
        holder: list = [None]
        try:
            body = await _body(request, holder)
            request_id = holder[-1]
            t = _field(body, "t", int, request_id)
            shape_raw = _field(body, "shape", list, request_id)
            if len(shape_raw) != 3:
                raise _RequestError(_bad_request(request_id, "shape must be [h, w, c]"))
            shape = tuple(int(v) for v in shape_raw)
            prompt = _field(body, "prompt", str, request_id)
            negative = _field(body, "negative_prompt", str, request_id)
            scale = float(_field(body, "guidance_scale", (int, float), request_id))
            payload = _field(body, "latent_b64", str, request_id)
            try:
                z = decode_f32_b64(payload, shape)
            except CodecError as exc:
                code = "shape_mismatch" if "needs" in str(exc) else "bad_request"
                raise _RequestError(_envelope(request_id, code, str(exc), 400))
            async with gate:
                try:
                    cond = denoiser.predict_eps(z, t, prompt)
                    if scale == 1.0:
                        eps = cond
                    else:
                        uncond = denoiser.predict_eps(z, t, negative)
                        eps = uncond + scale * (cond - uncond)
                except StackError as exc:
                    raise _RequestError(
                        _envelope(request_id, "backend_unavailable", str(exc), 503)
                    )
            return {"id": request_id, "eps_b64": encode_f32_b64(eps), "shape": list(shape)}
        except _RequestError as exc:
            return exc.response

    @app.post("/v1/caption")
    async def caption(request: Request):
        holder: list = [None]
        try:
            body = await _body(request, holder)
            request_id = holder[-1]
            image_b64 = _field(body, "image_png_b64", str, request_id)
            template_id = _field(body, "template_id", str, request_id)
            template_text = _field(body, "template_text", str, request_id)
            if template_id not in KNOWN_TEMPLATES:
                raise _RequestError(
                    _bad_request(request_id, f"unknown template_id {template_id!r}")
                )
            if template_text != KNOWN_TEMPLATES[template_id]:
                raise _RequestError(
                    _bad_request(request_id, "template_text does not match template_id")
                )
            try:
                image = decode_png_b64(image_b64)
            except CodecError as exc:
                raise _RequestError(_bad_request(request_id, str(exc)))
            async with gate:
                try:
                    text = captioner.caption(image, template_id, template_text)
                except StackError as exc:
                    raise _RequestError(
                        _envelope(request_id, "backend_unavailable", str(exc), 503)
                    )
            return {"id": request_id, "caption": text}
        except _RequestError as exc:
            return exc.response

    @app.post("/v1/embed")
    async def embed(request: Request):
        holder: list = [None]
        try:
            body = await _body(request, holder)
            request_id = holder[-1]
            tokens = _field(body, "tokens", list, request_id)
            if not all(isinstance(tok, str) for tok in tokens):
                raise _RequestError(_bad_request(request_id, "tokens must be strings"))
            if "latent_b64" in body:
                shape_raw = _field(body, "shape", list, request_id)
                try:
                    patch = decode_f32_b64(body["latent_b64"], tuple(int(v) for v in shape_raw))
                except CodecError as exc:
                    raise _RequestError(_bad_request(request_id, str(exc)))
            elif "image_png_b64" in body:
                try:
                    patch = decode_png_b64(body["image_png_b64"])
                except CodecError as exc:
                    raise _RequestError(_bad_request(request_id, str(exc)))
            else:
                raise _RequestError(
                    _bad_request(request_id, "need latent_b64 + shape or image_png_b64")
                )
            async with gate:
                try:
                    scores = embedder.scores(list(tokens), patch)
                except StackError as exc:
                    raise _RequestError(
                        _envelope(request_id, "backend_unavailable", str(exc), 503)
                    )
            return {"id": request_id, "scores": scores}
        except _RequestError as exc:
            return exc.response

    return app
