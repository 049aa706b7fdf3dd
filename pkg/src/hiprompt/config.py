"""Run configuration: JSON config files with flag overrides (flags win)."""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from typing import Any, Mapping

from .decompose import COMBINE_MODES, GuidanceConfig
from .errors import ConfigError, InvalidParameterError
from .images import IMAGE_FORMATS
from .pipeline import AblationFlags, StagePlan
from .prompts import CAPTION_TEMPLATES

ENDPOINT_ENV = "HIPROMPT_ENDPOINT"
WORKERS_ENV = "HIPROMPT_WORKERS"

_SCHEDULE_KEYS = {"steps", "beta_start", "beta_end", "kind"}
_BASE_KEYS = {"height", "width", "channels"}
_GUIDANCE_KEYS = {"scale", "sigma", "combine_mode", "negative_prompt"}
_SAMPLER_KEYS = {"ladder_steps", "eta", "tau", "alpha"}
_BACKEND_KEYS = {"kind", "endpoint", "data_std"}
_CAPTIONER_KEYS = {"kind", "endpoint", "template_id"}
_EMBEDDER_KEYS = {"kind", "endpoint"}
_ABLATION_KEYS = {"hp", "nd", "nr"}
_OUTPUT_KEYS = {"dir", "format", "norm_center", "norm_spread"}
_STAGE_KEYS = {
    "factor", "tau", "alpha", "steps", "eta", "sigma", "guidance_scale",
    "combine_mode", "patch", "stride", "resample",
}
_TOP_KEYS = {
    "prompt", "negative_prompt", "seed", "base", "schedule", "guidance",
    "sampler", "stages", "backend", "captioner", "embedder", "ablation",
    "output", "workers", "prompts_from",
}


@dataclass(frozen=True)
class ScheduleParams:
    steps: int = 1000
    beta_start: float = 0.00085
    beta_end: float = 0.012
    kind: str = "scaled_linear"


@dataclass(frozen=True)
class BackendSpec:
    kind: str = "analytic"  # analytic | remote
    endpoint: str | None = None
    data_std: float = 0.5


@dataclass(frozen=True)
class CaptionerSpec:
    kind: str = "none"  # none | remote
    endpoint: str | None = None
    template_id: str = "llava_formula"


@dataclass(frozen=True)
class EmbedderSpec:
    kind: str = "toy"  # toy | remote
    endpoint: str | None = None


@dataclass(frozen=True)
class RunConfig:
    global_prompt: str
    seed: int = 0
    negative_prompt: str = ""
    base_h: int = 32
    base_w: int = 32
    channels: int = 4
    schedule: ScheduleParams = field(default_factory=ScheduleParams)
    ladder_steps: int = 50
    eta: float = 0.0
    stages: tuple[StagePlan, ...] = ()
    backend: BackendSpec = field(default_factory=BackendSpec)
    captioner: CaptionerSpec = field(default_factory=CaptionerSpec)
    embedder: EmbedderSpec = field(default_factory=EmbedderSpec)
    ablation: AblationFlags = field(default_factory=AblationFlags)
    out_dir: str = "out"
    image_format: str = "png"
    workers: int | None = None
    prompts_from: tuple[str | None, ...] = ()
    guidance: GuidanceConfig = field(default_factory=GuidanceConfig)
    norm_center: float | None = None
    norm_spread: float | None = None


def default_workers() -> int:
    env = os.environ.get(WORKERS_ENV)
    if env:
        try:
            value = int(env)
        except ValueError:
            raise ConfigError(f"{WORKERS_ENV} must be an integer, got {env!r}") from None
        if value < 1:
            raise ConfigError(f"{WORKERS_ENV} must be >= 1, got {value}")
        return value
    return max(1, os.cpu_count() or 1)


def _check_keys(section: Mapping, allowed: set[str], where: str) -> None:
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)} in {where}")


def _as_pair(value, where: str) -> tuple[int, int]:
    if isinstance(value, int):
        return value, value
    if isinstance(value, (list, tuple)) and len(value) == 2:
        return int(value[0]), int(value[1])
    raise ConfigError(f"{where} must be an int or a [h, w] pair, got {value!r}")


def area_label_to_axes(label: str) -> tuple[int, int]:
    """Cumulative area label relative to the base: '4x' -> 2x per axis,
    '16x' -> 4x per axis, '8x' -> (2, 4) (wide)."""
    text = label.strip().lower()
    if not text.endswith("x"):
        raise ConfigError(f"stage label {label!r} must look like '4x'")
    try:
        area = int(text[:-1])
    except ValueError:
        raise ConfigError(f"stage label {label!r} must carry an integer area factor") from None
    if area < 1:
        raise ConfigError(f"stage area factor must be >= 1, got {area}")
    root = math.isqrt(area)
    if root * root == area:
        return root, root
    half = area // 2
    root = math.isqrt(half)
    if 2 * half == area and root * root == half:
        return root, 2 * root
    raise ConfigError(f"stage area factor {area} is not expressible as integer axes")


def _build_stage(entry, defaults: dict, prev_axes: tuple[int, int], where: str) -> tuple[StagePlan, tuple[int, int]]:
    if isinstance(entry, str):
        entry = {"factor": entry}
    if not isinstance(entry, Mapping):
        raise ConfigError(f"{where} must be a label or an object, got {entry!r}")
    _check_keys(entry, _STAGE_KEYS, where)
    factor = entry.get("factor")
    if factor is None:
        raise ConfigError(f"{where} is missing 'factor'")
    if isinstance(factor, str):
        # Labels are cumulative; convert to the per-stage ratio.
        cum = area_label_to_axes(factor)
        for cur, prev in zip(cum, prev_axes):
            if cur % prev:
                raise ConfigError(
                    f"{where}: cumulative factor {factor!r} does not divide the previous stage"
                )
        axes = (cum[0] // prev_axes[0], cum[1] // prev_axes[1])
        next_axes = cum
    else:
        axes = _as_pair(factor, f"{where}.factor")
        next_axes = (prev_axes[0] * axes[0], prev_axes[1] * axes[1])
    patch = entry.get("patch")
    stride = entry.get("stride")
    patch_h, patch_w = _as_pair(patch, f"{where}.patch") if patch is not None else (None, None)
    stride_h, stride_w = _as_pair(stride, f"{where}.stride") if stride is not None else (None, None)
    try:
        plan = StagePlan(
            scale_h=axes[0],
            scale_w=axes[1],
            t_start_fraction=float(entry.get("tau", defaults["tau"])),
            skip_residual_power=float(entry.get("alpha", defaults["alpha"])),
            ladder_steps=int(entry.get("steps", defaults["ladder_steps"])),
            eta=float(entry.get("eta", defaults["eta"])),
            patch_h=patch_h,
            patch_w=patch_w,
            stride_h=stride_h,
            stride_w=stride_w,
            guidance=GuidanceConfig(
                scale=float(entry.get("guidance_scale", defaults["guidance"].scale)),
                negative_text=defaults["guidance"].negative_text,
                sigma=float(entry.get("sigma", defaults["guidance"].sigma)),
                combine_mode=entry.get("combine_mode", defaults["guidance"].combine_mode),
            ),
            resample_method=entry.get("resample", "bicubic"),
        )
    except InvalidParameterError as exc:
        raise ConfigError(f"{where}: {exc}") from exc
    return plan, next_axes


def parse_config(path: str | None = None, overrides: Mapping[str, Any] | None = None) -> RunConfig:
    """Load and validate a run configuration.

    `path` points at a JSON object; `overrides` is a same-shaped partial
    object (usually assembled from CLI flags) merged on top. Unknown keys are
    rejected with their location.
    """
    doc: dict[str, Any] = {}
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                doc = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError(f"config {path} must hold a JSON object")
    doc = _deep_merge(doc, dict(overrides or {}))
    _check_keys(doc, _TOP_KEYS, "config")

    prompt = doc.get("prompt")
    if not prompt or not isinstance(prompt, str):
        raise ConfigError("config requires a non-empty 'prompt'")

    base = dict(doc.get("base", {}))
    _check_keys(base, _BASE_KEYS, "base")
    sched = dict(doc.get("schedule", {}))
    _check_keys(sched, _SCHEDULE_KEYS, "schedule")
    guid = dict(doc.get("guidance", {}))
    _check_keys(guid, _GUIDANCE_KEYS, "guidance")
    sampler = dict(doc.get("sampler", {}))
    _check_keys(sampler, _SAMPLER_KEYS, "sampler")
    backend = dict(doc.get("backend", {}))
    _check_keys(backend, _BACKEND_KEYS, "backend")
    captioner = dict(doc.get("captioner", {}))
    _check_keys(captioner, _CAPTIONER_KEYS, "captioner")
    embedder = dict(doc.get("embedder", {}))
    _check_keys(embedder, _EMBEDDER_KEYS, "embedder")
    ablation = dict(doc.get("ablation", {}))
    _check_keys(ablation, _ABLATION_KEYS, "ablation")
    output = dict(doc.get("output", {}))
    _check_keys(output, _OUTPUT_KEYS, "output")

    try:
        guidance = GuidanceConfig(
            scale=float(guid.get("scale", 7.5)),
            negative_text=str(doc.get("negative_prompt", guid.get("negative_prompt", ""))),
            sigma=float(guid.get("sigma", 2.0)),
            combine_mode=guid.get("combine_mode", "filtered_sum"),
        )
    except InvalidParameterError as exc:
        raise ConfigError(f"guidance: {exc}") from exc
    if guidance.combine_mode not in COMBINE_MODES:
        raise ConfigError(f"guidance.combine_mode must be one of {COMBINE_MODES}")

    stage_defaults = {
        "tau": float(sampler.get("tau", 0.75)),
        "alpha": float(sampler.get("alpha", 3.0)),
        "ladder_steps": int(sampler.get("ladder_steps", 50)),
        "eta": float(sampler.get("eta", 0.0)),
        "guidance": guidance,
    }
    stages: list[StagePlan] = []
    axes = (1, 1)
    for idx, entry in enumerate(doc.get("stages", [])):
        plan, axes = _build_stage(entry, stage_defaults, axes, f"stages[{idx}]")
        stages.append(plan)

    backend_kind = backend.get("kind", "analytic")
    if backend_kind not in ("analytic", "remote"):
        raise ConfigError(f"backend.kind must be 'analytic' or 'remote', got {backend_kind!r}")
    endpoint = backend.get("endpoint") or os.environ.get(ENDPOINT_ENV)
    if backend_kind == "remote" and not endpoint:
        raise ConfigError(f"remote backend needs backend.endpoint or {ENDPOINT_ENV}")
    data_std = float(backend.get("data_std", 0.5))
    if data_std < 0:
        raise ConfigError(f"backend.data_std must be >= 0, got {data_std}")

    captioner_kind = captioner.get("kind", "none")
    if captioner_kind not in ("none", "remote"):
        raise ConfigError(f"captioner.kind must be 'none' or 'remote', got {captioner_kind!r}")
    template_id = captioner.get("template_id", "llava_formula")
    if template_id not in CAPTION_TEMPLATES:
        raise ConfigError(f"captioner.template_id must be one of {sorted(CAPTION_TEMPLATES)}")
    if captioner_kind == "remote" and not captioner.get("endpoint"):
        raise ConfigError("remote captioner needs captioner.endpoint")

    embedder_kind = embedder.get("kind", "toy")
    if embedder_kind not in ("toy", "remote"):
        raise ConfigError(f"embedder.kind must be 'toy' or 'remote', got {embedder_kind!r}")
    if embedder_kind == "remote" and not embedder.get("endpoint"):
        raise ConfigError("remote embedder needs embedder.endpoint")

    image_format = output.get("format", "png")
    if image_format not in IMAGE_FORMATS:
        raise ConfigError(f"output.format must be one of {IMAGE_FORMATS}")

    prompts_from = doc.get("prompts_from", [])
    if isinstance(prompts_from, str):
        prompts_from = [prompts_from]
    prompts_from = tuple(prompts_from)
    if prompts_from and len(prompts_from) != len(stages):
        raise ConfigError(
            f"prompts_from lists {len(prompts_from)} manifests for {len(stages)} stages"
        )

    workers = doc.get("workers")
    if workers is not None:
        workers = int(workers)
        if workers < 1:
            raise ConfigError(f"workers must be >= 1, got {workers}")

    try:
        schedule = ScheduleParams(
            steps=int(sched.get("steps", 1000)),
            beta_start=float(sched.get("beta_start", 0.00085)),
            beta_end=float(sched.get("beta_end", 0.012)),
            kind=sched.get("kind", "scaled_linear"),
        )
        if schedule.kind not in ("linear", "scaled_linear"):
            raise ConfigError(f"schedule.kind must be 'linear' or 'scaled_linear'")
        if schedule.steps < 1:
            raise ConfigError("schedule.steps must be >= 1")
        if not 0.0 < schedule.beta_start <= schedule.beta_end < 1.0:
            raise ConfigError("schedule betas must satisfy 0 < beta_start <= beta_end < 1")
        base_h = int(base.get("height", 32))
        base_w = int(base.get("width", 32))
        channels = int(base.get("channels", 4))
        if min(base_h, base_w, channels) < 1:
            raise ConfigError("base dimensions must be >= 1")
        ladder_steps = stage_defaults["ladder_steps"]
        eta = stage_defaults["eta"]
        if ladder_steps < 1:
            raise ConfigError("sampler.ladder_steps must be >= 1")
        if not 0.0 <= eta <= 1.0:
            raise ConfigError("sampler.eta must lie in [0, 1]")
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid numeric value: {exc}") from exc

    return RunConfig(
        global_prompt=prompt,
        seed=int(doc.get("seed", 0)),
        negative_prompt=guidance.negative_text,
        base_h=base_h,
        base_w=base_w,
        channels=channels,
        schedule=schedule,
        ladder_steps=ladder_steps,
        eta=eta,
        stages=tuple(stages),
        backend=BackendSpec(kind=backend_kind, endpoint=endpoint, data_std=data_std),
        captioner=CaptionerSpec(
            kind=captioner_kind, endpoint=captioner.get("endpoint"), template_id=template_id
        ),
        embedder=EmbedderSpec(kind=embedder_kind, endpoint=embedder.get("endpoint")),
        ablation=AblationFlags(
            hp=bool(ablation.get("hp", True)),
            nd=bool(ablation.get("nd", True)),
            nr=bool(ablation.get("nr", True)),
        ),
        out_dir=str(output.get("dir", "out")),
        image_format=image_format,
        workers=workers,
        prompts_from=prompts_from,
        guidance=guidance,
        norm_center=output.get("norm_center"),
        norm_spread=output.get("norm_spread"),
    )


def _deep_merge(base: dict, extra: Mapping) -> dict:
    out = dict(base)
    for key, value in extra.items():
        if isinstance(value, Mapping) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = value
    return out
