"""Model stacks behind the three endpoints.

The deterministic reference stacks implement the closed-form math of the
engine's built-in test world, so an engine pointed at this server reproduces
its in-process results. Real model stacks (an SDXL-class denoiser, an
LLAVA/ShareCaptioner-class captioner, a CLIP-class embedder) plug in by
implementing the same three protocols; this server owns any VAE encode and
decode so clients only ever speak latents.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import Protocol

import numpy as np


class DenoiseStack(Protocol):
    def predict_eps(self, z: np.ndarray, t: int, prompt: str) -> np.ndarray: ...


class CaptionStack(Protocol):
    def caption(self, image_rgb: np.ndarray, template_id: str, template_text: str) -> str: ...


class EmbedStack(Protocol):
    def scores(self, tokens: list[str], patch: np.ndarray) -> list[float]: ...


class StackError(ValueError):
    """Raised when a requested stack cannot serve (maps to backend_unavailable)."""


def stable_unit_hash(text: str) -> float:
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") / 2.0**63 - 1.0


def scaled_linear_cumprod(steps: int, beta_start: float, beta_end: float,
                          kind: str = "scaled_linear") -> np.ndarray:
    if kind == "linear":
        betas = np.linspace(beta_start, beta_end, steps)
    elif kind == "scaled_linear":
        betas = np.linspace(math.sqrt(beta_start), math.sqrt(beta_end), steps) ** 2
    else:
        raise StackError(f"unknown schedule kind {kind!r}")
    return np.cumprod(1.0 - betas)


@dataclass
class AnalyticDenoiseStack:
    """Posterior-mean denoiser for x0 ~ N(mu(prompt), data_std^2 I)."""

    data_std: float = 0.5
    steps: int = 1000
    beta_start: float = 0.00085
    beta_end: float = 0.012
    kind: str = "scaled_linear"

    def __post_init__(self):
        self._cumprod = scaled_linear_cumprod(self.steps, self.beta_start,
                                              self.beta_end, self.kind)

    def alpha_cumprod(self, t: int) -> float:
        if t == 0:
            return 1.0
        if not 1 <= t <= self.steps:
            raise StackError(f"timestep {t} outside [1, {self.steps}]")
        return float(self._cumprod[t - 1])

    def predict_eps(self, z: np.ndarray, t: int, prompt: str) -> np.ndarray:
        ac = self.alpha_cumprod(t)
        if ac >= 1.0:
            raise StackError(f"alpha_cumprod({t}) = 1; eps undefined")
        mu = stable_unit_hash(prompt)
        var = self.data_std * self.data_std
        root_ac = math.sqrt(ac)
        gain = root_ac * var / (ac * var + 1.0 - ac)
        x0_mean = mu + gain * (z - root_ac * mu)
        return (z - root_ac * x0_mean) / math.sqrt(1.0 - ac)


KNOWN_TEMPLATES = {
    "llava_formula": (
        "Here's a formula for a Stable Diffusion image prompt: an image of "
        "[adjective] [subject] [material], [color scheme], [photo location], "
        "detailed. Answer in one sentence."
    ),
    "sharecaptioner_detail": "Analyze the image in a comprehensive and detailed manner.",
}


@dataclass
class EchoCaptionStack:
    """Returns a configured caption; stands in for an MLLM captioner."""

    text: str = "a sunlit palm tree over white sand, detailed"

    def caption(self, image_rgb: np.ndarray, template_id: str, template_text: str) -> str:
        return self.text


@dataclass
class ProjectionEmbedStack:
    """Token-hash projection scores in [-1, 1], matching the engine's toy
    embedder so similarity-driven refinement agrees across the wire."""

    def scores(self, tokens: list[str], patch: np.ndarray) -> list[float]:
        flat = patch.reshape(-1)
        out = []
        for token in tokens:
            seed = int.from_bytes(
                hashlib.sha256(("embed:" + token).encode("utf-8")).digest()[:8], "big"
            )
            direction = np.random.default_rng(seed).standard_normal(flat.size)
            direction /= np.linalg.norm(direction)
            out.append(float(np.tanh(float(flat @ direction))))
        return out


def build_denoiser(identifier: str, data_std: float, steps: int, beta_start: float,
                   beta_end: float, kind: str) -> DenoiseStack:
    if identifier == "analytic":
        return AnalyticDenoiseStack(data_std, steps, beta_start, beta_end, kind)
    raise StackError(
        f"no denoiser stack named {identifier!r}; implement DenoiseStack and register it"
    )


def build_captioner(identifier: str, caption_text: str) -> CaptionStack:
    if identifier == "echo":
        return EchoCaptionStack(caption_text)
    raise StackError(
        f"no captioner stack named {identifier!r}; implement CaptionStack and register it"
    )


def build_embedder(identifier: str) -> EmbedStack:
    if identifier == "projection":
        return ProjectionEmbedStack()
    raise StackError(
        f"no embedder stack named {identifier!r}; implement EmbedStack and register it"
    )
