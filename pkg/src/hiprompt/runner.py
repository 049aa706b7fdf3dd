"""Executes a RunConfig end to end and writes images plus the run report.

The report file carries only reproducible content (digests, tallies, call
counts); wall-clock timings go to a separate sidecar so two identical runs
produce byte-identical reports regardless of worker count.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .backends import (
    AnalyticDenoiser,
    AnalyticWorldSpec,
    Capability,
    RemoteCaptioner,
    RemoteDenoiser,
    RemoteEmbedder,
    ToyEmbedder,
)
from .config import RunConfig, default_workers
from .grid import LatentGrid, grid_to_bytes
from .images import encode_image, normalize_to_image
from .pipeline import CountingBackend, StageStats, generate_base, upscale_stage
from .prompts import load_manifest
from .schedule import make_schedule

REPORT_NAME = "report.json"
TIMINGS_NAME = "timings.txt"


@dataclass
class StageReport:
    index: int
    kind: str
    height: int
    width: int
    q: int
    provenance: dict[str, int]
    denoise_calls: int
    caption_calls: int
    embed_calls: int
    output_file: str
    digest_raw: str
    digest_file: str


@dataclass
class RunReport:
    seed: int
    global_prompt: str
    negative_prompt: str
    image_format: str
    ablation: dict[str, bool]
    stages: list[StageReport] = field(default_factory=list)

    def to_json(self) -> str:
        doc = {
            "seed": self.seed,
            "global_prompt": self.global_prompt,
            "negative_prompt": self.negative_prompt,
            "image_format": self.image_format,
            "ablation": self.ablation,
            "stages": [asdict(s) for s in self.stages],
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _digest(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def build_backend(config: RunConfig, schedule):
    if config.backend.kind == "analytic":
        world = AnalyticWorldSpec(data_std=config.backend.data_std, channels=config.channels)
        return AnalyticDenoiser(world, schedule, config.base_h, config.base_w)
    capability = Capability(config.base_h, config.base_w, config.channels)
    return RemoteDenoiser(config.backend.endpoint, capability)


def build_captioner(config: RunConfig):
    if config.captioner.kind == "none":
        return None
    return RemoteCaptioner(config.captioner.endpoint)


def build_embedder(config: RunConfig):
    if config.embedder.kind == "remote":
        return RemoteEmbedder(config.embedder.endpoint)
    return ToyEmbedder()


def _normalization(config: RunConfig, backend) -> tuple[float, float]:
    if config.norm_center is not None and config.norm_spread is not None:
        return float(config.norm_center), float(config.norm_spread)
    if isinstance(getattr(backend, "inner", backend), AnalyticDenoiser):
        inner = getattr(backend, "inner", backend)
        center = inner.world.mu(config.global_prompt)
        spread = 3.0 * inner.world.data_std if inner.world.data_std > 0 else 1.0
        return center, spread
    return 0.0, 1.0


def run(config: RunConfig) -> tuple[list[Path], RunReport]:
    """Generate the base latent, apply each upscale stage, write outputs."""
    schedule = make_schedule(
        config.schedule.steps,
        config.schedule.beta_start,
        config.schedule.beta_end,
        config.schedule.kind,
    )
    backend = CountingBackend(build_backend(config, schedule))
    captioner = build_captioner(config)
    embedder = build_embedder(config)
    workers = config.workers if config.workers is not None else default_workers()
    norm_center, norm_spread = _normalization(config, backend)

    manifests: list = [None] * len(config.stages)
    for i, source in enumerate(config.prompts_from):
        if source:
            _, records = load_manifest(source)
            manifests[i] = records

    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report = RunReport(
        seed=config.seed,
        global_prompt=config.global_prompt,
        negative_prompt=config.negative_prompt,
        image_format=config.image_format,
        ablation={"hp": config.ablation.hp, "nd": config.ablation.nd, "nr": config.ablation.nr},
    )
    paths: list[Path] = []
    timings: list[tuple[str, float]] = []
    ext = config.image_format

    def emit(stage_index: int, kind: str, latent: LatentGrid, stats: StageStats) -> None:
        image = normalize_to_image(latent, norm_center, norm_spread)
        payload = encode_image(image, config.image_format)
        name = f"stage{stage_index}_{kind}.{ext}"
        path = out_dir / name
        path.write_bytes(payload)
        paths.append(path)
        report.stages.append(
            StageReport(
                index=stage_index,
                kind=kind,
                height=latent.height,
                width=latent.width,
                q=stats.q,
                provenance=dict(stats.provenance),
                denoise_calls=stats.denoise_calls,
                caption_calls=stats.caption_calls,
                embed_calls=stats.embed_calls,
                output_file=name,
                digest_raw=_digest(grid_to_bytes(latent)),
                digest_file=_digest(payload),
            )
        )

    started = time.perf_counter()
    z = generate_base(
        backend,
        config.global_prompt,
        config.seed,
        config.base_h,
        config.base_w,
        schedule,
        config.guidance,
        ladder_steps=config.ladder_steps,
        eta=config.eta,
    )
    base_stats = StageStats(q=1, provenance={}, denoise_calls=backend.calls)
    timings.append(("stage0_base", time.perf_counter() - started))
    emit(0, "base", z, base_stats)

    calls_before = backend.calls
    for stage_index, plan in enumerate(config.stages, start=1):
        stage_start = time.perf_counter()
        z, stats = upscale_stage(
            backend,
            captioner,
            embedder,
            z,
            plan,
            config.global_prompt,
            config.seed,
            schedule,
            stage_index=stage_index,
            ablation=config.ablation,
            workers=workers,
            prompt_records=manifests[stage_index - 1],
            caption_template=config.captioner.template_id,
            norm_center=norm_center,
            norm_spread=norm_spread,
        )
        stats.denoise_calls = backend.calls - calls_before
        calls_before = backend.calls
        timings.append((f"stage{stage_index}_upscale", time.perf_counter() - stage_start))
        emit(stage_index, "upscale", z, stats)

    (out_dir / REPORT_NAME).write_text(report.to_json(), encoding="utf-8")
    lines = [f"{name} {seconds:.3f}s" for name, seconds in timings]
    lines.append(f"total {sum(s for _, s in timings):.3f}s")
    (out_dir / TIMINGS_NAME).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return paths, report
