"""Tuning-free higher-resolution diffusion inference engine.

Upsamples a base latent, plans overlapping patches, refines per-patch
captions, and denoises with frequency-decomposed prompt-conditioned noise
estimates fused by overlap averaging. Model inference sits behind backends so
the whole pipeline runs exactly against the built-in closed-form denoiser.
"""

from .backends import (
    AnalyticDenoiser,
    AnalyticWorldSpec,
    Capability,
    DenoiserBackend,
    RemoteCaptioner,
    RemoteDenoiser,
    RemoteEmbedder,
    ToyEmbedder,
    analytic_predict_eps,
    remote_caption,
    remote_predict_eps,
    stable_unit_hash,
    toy_embed_score,
)
from .config import BackendSpec, CaptionerSpec, EmbedderSpec, RunConfig, ScheduleParams, parse_config
from .decompose import FreqSplit, GuidanceConfig, combine_eps, guided_eps, split
from .errors import (
    BackendError,
    CaptionError,
    ConfigError,
    DegenerateTimestepError,
    HiPromptError,
    InvalidParameterError,
    InvariantFailure,
    ProtocolError,
    ShapeMismatchError,
)
from .grid import (
    Kernel1D,
    LatentGrid,
    gaussian_blur,
    gaussian_kernel,
    grid_from_bytes,
    grid_to_bytes,
    moments,
    read_grid,
    resample,
    write_grid,
)
from .images import encode_image, normalize_to_image
from .pipeline import AblationFlags, StagePlan, generate_base, stream_rng, upscale_stage
from .prompts import (
    CaptionQuery,
    HierarchicalPrompt,
    assemble_hierarchy,
    build_caption_query,
    filter_uninformative,
    refine_caption,
    tokenize_unigrams,
)
from .runner import RunReport, StageReport, run
from .schedule import (
    NoiseSchedule,
    ddim_ladder,
    ddim_step,
    make_schedule,
    predict_x0,
    q_sample,
)
from .tiling import PatchLayout, extract, fuse, plan_patches

__version__ = "0.1.0"
