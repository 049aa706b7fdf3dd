"""Denoiser/captioner/embedder contracts, closed-form test backends, and the
HTTP wire clients.

Wire protocol (JSON bodies, float32 little-endian base64 payloads):

  POST /v1/denoise  {id, t, shape: [h, w, c], latent_b64, prompt,
                     negative_prompt, guidance_scale}
                 -> {id, eps_b64, shape}
  POST /v1/caption  {id, image_png_b64, template_id, template_text}
                 -> {id, caption}
  POST /v1/embed    {id, tokens: [..], latent_b64 + shape | image_png_b64}
                 -> {id, scores: [..]}
  errors            {id, error_code: bad_request | shape_mismatch |
                     backend_unavailable, message}

Transient failures (connect errors, timeouts, 5xx, backend_unavailable) are
retried 3 times with exponential backoff starting at 250 ms; protocol
violations are raised immediately with the request id attached.
"""

from __future__ import annotations

import base64
import binascii
import hashlib
import math
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np
import requests

from .errors import (
    BackendError,
    CaptionError,
    DegenerateTimestepError,
    ProtocolError,
    ShapeMismatchError,
)
from .grid import LatentGrid
from .prompts import CaptionQuery
from .schedule import NoiseSchedule

RETRY_ATTEMPTS = 3
RETRY_BACKOFF_S = 0.25
POOL_SIZE = 4
ERROR_CODES = ("bad_request", "shape_mismatch", "backend_unavailable")


@dataclass(frozen=True)
class Capability:
    """What the denoiser natively consumes."""

    native_patch_h: int
    native_patch_w: int
    channels: int


class DenoiserBackend(ABC):
    """Produces an eps estimate shaped like its input latent."""

    capability: Capability
    supports_guidance: bool = False

    @abstractmethod
    def predict_eps(self, z: LatentGrid, t: int, text: str) -> LatentGrid:
        ...


def stable_unit_hash(text: str) -> float:
    """Deterministic map from text to [-1, 1) via SHA-256 (platform independent)."""
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") / 2.0**63 - 1.0


@dataclass(frozen=True)
class AnalyticWorldSpec:
    """Gaussian toy world: x0 ~ N(mu(text), data_std^2 I) per prompt.

    mu comes from the stable text hash; fixtures may pin exact values via
    mu_overrides without disturbing the hashing contract.
    """

    data_std: float = 0.5
    channels: int = 4
    mu_overrides: tuple[tuple[str, float], ...] = ()

    def mu(self, text: str) -> float:
        for key, value in self.mu_overrides:
            if key == text:
                return value
        return stable_unit_hash(text)


def analytic_predict_eps(
    world: AnalyticWorldSpec, z: LatentGrid, t: int, text: str, s: NoiseSchedule
) -> LatentGrid:
    """Bayes-optimal eps for the Gaussian world under the forward process.

    E[x0|z] = mu + (sqrt(ac)*s^2 / (ac*s^2 + 1 - ac)) * (z - sqrt(ac)*mu),
    eps_hat = (z - sqrt(ac)*E[x0|z]) / sqrt(1 - ac).
    """
    ac = s.alpha_cumprod(t)
    if ac >= 1.0:
        raise DegenerateTimestepError(f"alpha_cumprod({t}) = 1; eps undefined at t = 0")
    mu = world.mu(text)
    var = world.data_std * world.data_std
    root_ac = math.sqrt(ac)
    gain = root_ac * var / (ac * var + 1.0 - ac)
    x0_mean = mu + gain * (z.values - root_ac * mu)
    return LatentGrid((z.values - root_ac * x0_mean) / math.sqrt(1.0 - ac))


class AnalyticDenoiser(DenoiserBackend):
    """In-process closed-form backend; stateless and safe for concurrent calls."""

    def __init__(
        self,
        world: AnalyticWorldSpec,
        schedule: NoiseSchedule,
        native_patch_h: int,
        native_patch_w: int,
    ):
        self.world = world
        self.schedule = schedule
        self.capability = Capability(native_patch_h, native_patch_w, world.channels)

    def predict_eps(self, z: LatentGrid, t: int, text: str) -> LatentGrid:
        return analytic_predict_eps(self.world, z, t, text, self.schedule)


def toy_embed_score(token: str, patch: LatentGrid) -> float:
    """Deterministic similarity stand-in: tanh of the patch's projection onto
    a unit direction derived from the token hash."""
    seed = int.from_bytes(hashlib.sha256(("embed:" + token).encode("utf-8")).digest()[:8], "big")
    direction = np.random.default_rng(seed).standard_normal(patch.values.size)
    direction /= np.linalg.norm(direction)
    return float(np.tanh(float(patch.values.reshape(-1) @ direction)))


class ToyEmbedder:
    def score(self, token: str, patch: LatentGrid) -> float:
        return toy_embed_score(token, patch)


# --- wire codec -------------------------------------------------------------


def encode_f32_b64(values: np.ndarray) -> str:
    return base64.b64encode(np.asarray(values).astype("<f4").tobytes()).decode("ascii")


def decode_f32_b64(payload: str, shape: tuple[int, int, int], request_id: str | None = None) -> np.ndarray:
    try:
        raw = base64.b64decode(payload.encode("ascii"), validate=True)
    except (binascii.Error, UnicodeEncodeError) as exc:
        raise ProtocolError(f"invalid base64 payload: {exc}", request_id) from exc
    h, w, c = shape
    if len(raw) != h * w * c * 4:
        raise ProtocolError(
            f"payload has {len(raw)} bytes, shape {h}x{w}x{c} needs {h * w * c * 4}",
            request_id,
        )
    return np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(h, w, c)


def _parse_error_envelope(body: dict, request_id: str) -> BackendError:
    code = body.get("error_code")
    message = body.get("message", "")
    if code == "shape_mismatch":
        return ShapeMismatchError(f"server reported shape mismatch: {message}")
    if code == "backend_unavailable":
        return BackendError(f"backend unavailable: {message}", request_id)
    return ProtocolError(f"server error {code!r}: {message}", request_id)


class _WireClient:
    """Shared HTTP plumbing: session pool, retries, envelope handling."""

    def __init__(self, endpoint: str, timeout: float = 30.0, attempts: int = RETRY_ATTEMPTS,
                 backoff_s: float = RETRY_BACKOFF_S, pool_size: int = POOL_SIZE):
        self.endpoint = endpoint.rstrip("/")
        self.timeout = timeout
        self.attempts = attempts
        self.backoff_s = backoff_s
        self._session = requests.Session()
        adapter = requests.adapters.HTTPAdapter(pool_connections=pool_size, pool_maxsize=pool_size)
        self._session.mount("http://", adapter)
        self._session.mount("https://", adapter)
        self._counter = 0

    def next_id(self, kind: str) -> str:
        self._counter += 1
        return f"{kind}-{self._counter:06d}"

    def post(self, path: str, body: dict, request_id: str) -> dict:
        last: BackendError | None = None
        for attempt in range(self.attempts):
            if attempt:
                time.sleep(self.backoff_s * 2 ** (attempt - 1))
            try:
                resp = self._session.post(self.endpoint + path, json=body, timeout=self.timeout)
            except requests.exceptions.Timeout as exc:
                last = BackendError(f"request {request_id} timed out: {exc}", request_id)
                continue
            except requests.exceptions.RequestException as exc:
                last = BackendError(f"request {request_id} failed: {exc}", request_id)
                continue
            if resp.status_code >= 500:
                last = BackendError(
                    f"request {request_id} got HTTP {resp.status_code}", request_id
                )
                continue
            try:
                payload = resp.json()
            except ValueError as exc:
                raise ProtocolError(f"non-JSON response: {exc}", request_id) from exc
            if "error_code" in payload:
                err = _parse_error_envelope(payload, request_id)
                if payload.get("error_code") == "backend_unavailable":
                    last = err
                    continue
                raise err
            if payload.get("id") != request_id:
                raise ProtocolError(
                    f"response id {payload.get('id')!r} != request id {request_id!r}", request_id
                )
            return payload
        assert last is not None
        raise last


class RemoteDenoiser(DenoiserBackend):
    """Denoiser speaking the wire protocol; guidance is applied server-side."""

    supports_guidance = True

    def __init__(self, endpoint: str, capability: Capability, **wire_kwargs):
        self.capability = capability
        self._client = _WireClient(endpoint, **wire_kwargs)

    def _request(self, z: LatentGrid, t: int, text: str, negative_text: str,
                 scale: float) -> LatentGrid:
        request_id = self._client.next_id("dn")
        body = {
            "id": request_id,
            "t": t,
            "shape": list(z.shape),
            "latent_b64": encode_f32_b64(z.values),
            "prompt": text,
            "negative_prompt": negative_text,
            "guidance_scale": scale,
        }
        payload = self._client.post("/v1/denoise", body, request_id)
        try:
            shape = tuple(int(v) for v in payload["shape"])
            eps_b64 = payload["eps_b64"]
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError(f"malformed denoise response: {exc}", request_id) from exc
        if shape != z.shape:
            raise ShapeMismatchError(
                f"server returned shape {shape}, expected {z.shape} (request {request_id})"
            )
        return LatentGrid(decode_f32_b64(eps_b64, shape, request_id))

    def predict_eps(self, z: LatentGrid, t: int, text: str) -> LatentGrid:
        return self._request(z, t, text, "", 1.0)

    def predict_eps_guided(self, z: LatentGrid, t: int, text: str, negative_text: str,
                           scale: float) -> LatentGrid:
        return self._request(z, t, text, negative_text, scale)


def remote_predict_eps(endpoint: str, z: LatentGrid, t: int, text: str, cfg) -> LatentGrid:
    """One-shot guided denoise against endpoint (cfg: GuidanceConfig)."""
    capability = Capability(z.height, z.width, z.channels)
    return RemoteDenoiser(endpoint, capability).predict_eps_guided(
        z, t, text, cfg.negative_text, cfg.scale
    )


class RemoteCaptioner:
    def __init__(self, endpoint: str, **wire_kwargs):
        self._client = _WireClient(endpoint, **wire_kwargs)

    def caption(self, image_png: bytes, query: CaptionQuery) -> str:
        request_id = self._client.next_id("cap")
        body = {
            "id": request_id,
            "image_png_b64": base64.b64encode(image_png).decode("ascii"),
            "template_id": query.template_id,
            "template_text": query.text,
        }
        payload = self._client.post("/v1/caption", body, request_id)
        caption = payload.get("caption")
        if not isinstance(caption, str):
            raise ProtocolError("caption response missing 'caption'", request_id)
        caption = caption.strip()
        if not caption:
            raise CaptionError(f"empty caption (request {request_id})", request_id)
        return caption


def remote_caption(endpoint: str, image_png: bytes, query: CaptionQuery) -> str:
    return RemoteCaptioner(endpoint).caption(image_png, query)


class RemoteEmbedder:
    def __init__(self, endpoint: str, **wire_kwargs):
        self._client = _WireClient(endpoint, **wire_kwargs)

    def score(self, token: str, patch: LatentGrid) -> float:
        scores = self.score_tokens([token], patch)
        return scores[0]

    def score_tokens(self, tokens: list[str], patch: LatentGrid) -> list[float]:
        request_id = self._client.next_id("emb")
        body = {
            "id": request_id,
            "tokens": list(tokens),
            "latent_b64": encode_f32_b64(patch.values),
            "shape": list(patch.shape),
        }
        payload = self._client.post("/v1/embed", body, request_id)
        scores = payload.get("scores")
        if not isinstance(scores, list) or len(scores) != len(tokens):
            raise ProtocolError(
                f"embed response must carry {len(tokens)} scores", request_id
            )
        return [float(v) for v in scores]
