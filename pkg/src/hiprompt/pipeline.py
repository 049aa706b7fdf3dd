"""End-to-end orchestration: base generation, upsample, recaption, re-noise,
patch-wise frequency-decomposed denoising with overlap fusion.

Randomness is pre-split per (seed, purpose, stage, step, patch) so results are
byte-identical for any worker count.
"""

from __future__ import annotations

import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .backends import Capability, DenoiserBackend
from .decompose import GuidanceConfig, combine_eps, guided_eps
from .errors import BackendError, CaptionError, InvalidParameterError
from .grid import LatentGrid, resample
from .images import encode_image, normalize_to_image
from .prompts import (
    FALLBACK_GLOBAL,
    MLLM_REFINED,
    HierarchicalPrompt,
    PatchPromptRecord,
    assemble_hierarchy,
    build_caption_query,
    hierarchy_from_records,
)
from .schedule import NoiseSchedule, ddim_ladder, ddim_step, q_sample
from .tiling import PatchLayout, extract, fuse, plan_patches

TAG_BASE_INIT = 0
TAG_STAGE_INIT = 1
TAG_STAGE_RESIDUAL = 2
TAG_STEP_NOISE = 3


def stream_rng(seed: int, tag: int, stage: int = 0, step: int = 0, patch: int = 0) -> np.random.Generator:
    """Independent generator per (seed, purpose, stage, step, patch)."""
    return np.random.default_rng([seed, tag, stage, step, patch])


@dataclass(frozen=True)
class StagePlan:
    """One upscale stage: per-axis scale, re-noise depth, ladder, tiling."""

    scale_h: int
    scale_w: int
    t_start_fraction: float = 0.75
    skip_residual_power: float = 3.0
    ladder_steps: int = 50
    eta: float = 0.0
    patch_h: int | None = None
    patch_w: int | None = None
    stride_h: int | None = None
    stride_w: int | None = None
    guidance: GuidanceConfig = field(default_factory=GuidanceConfig)
    resample_method: str = "bicubic"

    def __post_init__(self):
        if self.scale_h < 1 or self.scale_w < 1:
            raise InvalidParameterError(f"scale factors must be >= 1, got {self.scale_h}x{self.scale_w}")
        if not 0.0 < self.t_start_fraction <= 1.0:
            raise InvalidParameterError(f"t_start_fraction must lie in (0, 1], got {self.t_start_fraction}")
        if self.skip_residual_power < 0:
            raise InvalidParameterError(f"skip_residual_power must be >= 0, got {self.skip_residual_power}")
        if self.ladder_steps < 1:
            raise InvalidParameterError(f"ladder_steps must be >= 1, got {self.ladder_steps}")
        if not 0.0 <= self.eta <= 1.0:
            raise InvalidParameterError(f"eta must lie in [0, 1], got {self.eta}")


@dataclass(frozen=True)
class AblationFlags:
    hp: bool = True  # hierarchical per-patch prompts
    nd: bool = True  # noise decomposition (combine global/local estimates)
    nr: bool = True  # n-gram caption refinement


@dataclass
class StageStats:
    q: int
    provenance: dict[str, int]
    caption_calls: int = 0
    embed_calls: int = 0
    denoise_calls: int = 0


class CountingBackend(DenoiserBackend):
    """Thread-safe call-count wrapper; counts are config-deterministic."""

    def __init__(self, inner: DenoiserBackend):
        self.inner = inner
        self.capability = inner.capability
        self.supports_guidance = inner.supports_guidance
        self.calls = 0
        self._lock = threading.Lock()

    def _tick(self):
        with self._lock:
            self.calls += 1

    def predict_eps(self, z, t, text):
        self._tick()
        return self.inner.predict_eps(z, t, text)

    def predict_eps_guided(self, z, t, text, negative_text, scale):
        self._tick()
        return self.inner.predict_eps_guided(z, t, text, negative_text, scale)


def _ladder_pairs(ladder: list[int]) -> list[tuple[int, int]]:
    return list(zip(ladder, ladder[1:] + [0]))


def generate_base(
    backend: DenoiserBackend,
    global_text: str,
    seed: int,
    base_h: int,
    base_w: int,
    s: NoiseSchedule,
    cfg: GuidanceConfig,
    *,
    ladder_steps: int = 50,
    eta: float = 0.0,
) -> LatentGrid:
    """Full-ladder generation from seeded N(0, I) under the global prompt."""
    cap = backend.capability
    if (base_h, base_w) != (cap.native_patch_h, cap.native_patch_w):
        raise InvalidParameterError(
            f"base {base_h}x{base_w} does not match backend native "
            f"{cap.native_patch_h}x{cap.native_patch_w}"
        )
    z = LatentGrid(stream_rng(seed, TAG_BASE_INIT).standard_normal((base_h, base_w, cap.channels)))
    ladder = ddim_ladder(s.steps, ladder_steps, s.steps)
    for t, t_prev in _ladder_pairs(ladder):
        eps = guided_eps(backend, z, t, global_text, cfg)
        noise = None
        if eta > 0.0:
            noise = LatentGrid(stream_rng(seed, TAG_STEP_NOISE, 0, t).standard_normal(z.shape))
        z = ddim_step(z, eps, t, t_prev, eta, noise, s)
    return z


def _resolve_tiling(plan: StagePlan, cap: Capability, grid_h: int, grid_w: int) -> PatchLayout:
    patch_h = min(plan.patch_h or cap.native_patch_h, grid_h)
    patch_w = min(plan.patch_w or cap.native_patch_w, grid_w)
    stride_h = plan.stride_h or max(1, patch_h // 2)
    stride_w = plan.stride_w or max(1, patch_w // 2)
    return plan_patches(grid_h, grid_w, patch_h, patch_w, stride_h, stride_w)


def _stage_prompts(
    z0_up: LatentGrid,
    layout: PatchLayout,
    global_text: str,
    captioner,
    embedder,
    ablation: AblationFlags,
    caption_template: str,
    norm_center: float,
    norm_spread: float,
    prompt_records: Sequence[PatchPromptRecord] | None,
    stats: StageStats,
) -> HierarchicalPrompt:
    if prompt_records is not None:
        return hierarchy_from_records(global_text, prompt_records, layout)
    if not ablation.hp or captioner is None:
        return HierarchicalPrompt(
            global_text,
            tuple(global_text for _ in range(layout.count)),
            tuple(FALLBACK_GLOBAL for _ in range(layout.count)),
        )
    query = build_caption_query(caption_template)
    raw_captions: list[str] = []
    for i in range(layout.count):
        image = normalize_to_image(extract(z0_up, layout, i), norm_center, norm_spread)
        try:
            stats.caption_calls += 1
            raw_captions.append(captioner.caption(encode_image(image, "png"), query))
        except (CaptionError, BackendError):
            # A broken caption never aborts the run; the patch falls back.
            raw_captions.append("")
    if not ablation.nr:
        texts, provenance = [], []
        for raw in raw_captions:
            raw = raw.strip()
            if raw:
                texts.append(raw)
                provenance.append(MLLM_REFINED)
            else:
                texts.append(global_text)
                provenance.append(FALLBACK_GLOBAL)
        return HierarchicalPrompt(global_text, tuple(texts), tuple(provenance))

    patch_cache: dict[int, LatentGrid] = {}

    def score_fn(i: int, token: str) -> float:
        if i not in patch_cache:
            patch_cache[i] = extract(z0_up, layout, i)
        stats.embed_calls += 1
        return embedder.score(token, patch_cache[i])

    return assemble_hierarchy(global_text, raw_captions, score_fn, layout)


def _residual_weight(t: int, total_steps: int, power: float) -> float:
    # Cosine anchor toward the re-noised upsampled base: strong early in the
    # reverse pass, vanishing at the end; power 0 disables the blend.
    if power == 0.0:
        return 0.0
    return ((1.0 + math.cos(math.pi * (total_steps - t) / total_steps)) / 2.0) ** power


def upscale_stage(
    backend: DenoiserBackend,
    captioner,
    embedder,
    z0: LatentGrid,
    plan: StagePlan,
    global_text: str,
    seed: int,
    schedule: NoiseSchedule,
    *,
    stage_index: int = 1,
    ablation: AblationFlags = AblationFlags(),
    workers: int = 1,
    prompt_records: Sequence[PatchPromptRecord] | None = None,
    caption_template: str = "llava_formula",
    norm_center: float = 0.0,
    norm_spread: float = 1.0,
) -> tuple[LatentGrid, StageStats]:
    """One upscale stage: resample, caption/refine, re-noise, tiled denoise.

    Per-step patch updates are independent tasks; fusion runs in fixed patch
    order, so the output does not depend on the worker count.
    """
    new_h = z0.height * plan.scale_h
    new_w = z0.width * plan.scale_w
    z0_up = resample(z0, new_h, new_w, plan.resample_method)
    layout = _resolve_tiling(plan, backend.capability, new_h, new_w)
    stats = StageStats(q=layout.count, provenance={})
    hierarchy = _stage_prompts(
        z0_up, layout, global_text, captioner, embedder, ablation,
        caption_template, norm_center, norm_spread, prompt_records, stats,
    )
    stats.provenance = hierarchy.tally()

    total = schedule.steps
    t_start = max(1, round(plan.t_start_fraction * total))
    ladder = ddim_ladder(t_start, plan.ladder_steps, total)
    init_noise = LatentGrid(
        stream_rng(seed, TAG_STAGE_INIT, stage_index).standard_normal(z0_up.shape)
    )
    z = q_sample(z0_up, t_start, init_noise, schedule)
    residual_noise: LatentGrid | None = None
    if plan.skip_residual_power > 0.0:
        residual_noise = LatentGrid(
            stream_rng(seed, TAG_STAGE_RESIDUAL, stage_index).standard_normal(z0_up.shape)
        )

    cfg = plan.guidance

    def step_patch(args: tuple[int, int, int, LatentGrid]) -> LatentGrid:
        i, t, t_prev, z_t = args
        z_patch = extract(z_t, layout, i)
        try:
            eps_global = guided_eps(backend, z_patch, t, global_text, cfg)
            if ablation.nd:
                eps_local = guided_eps(backend, z_patch, t, hierarchy.patch_texts[i], cfg)
                eps = combine_eps(eps_global, eps_local, cfg)
            else:
                eps = eps_global
        except BackendError as exc:
            raise BackendError(
                f"stage {stage_index} patch {i}: {exc}", exc.request_id
            ) from exc
        noise = None
        if plan.eta > 0.0:
            noise = LatentGrid(
                stream_rng(seed, TAG_STEP_NOISE, stage_index, t, i).standard_normal(z_patch.shape)
            )
        return ddim_step(z_patch, eps, t, t_prev, plan.eta, noise, schedule)

    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for t, t_prev in _ladder_pairs(ladder):
            tasks = [(i, t, t_prev, z) for i in range(layout.count)]
            if pool is None:
                patches = [step_patch(task) for task in tasks]
            else:
                patches = list(pool.map(step_patch, tasks))
            z = fuse(patches, layout)
            weight = _residual_weight(t, total, plan.skip_residual_power)
            if weight > 0.0:
                anchor = q_sample(z0_up, t_prev, residual_noise, schedule)
                z = LatentGrid((1.0 - weight) * z.values + weight * anchor.values)
    finally:
        if pool is not None:
            pool.shutdown()
    return z, stats
