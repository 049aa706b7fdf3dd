"""Low/high frequency splitting and prompt-conditioned noise combination."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BackendError, InvalidParameterError, InvariantFailure
from .grid import LatentGrid, gaussian_blur, same_shape

COMBINE_MODES = ("filtered_sum", "plain_sum")


@dataclass(frozen=True)
class FreqSplit:
    """low = blur(z), high = z - low; reconstruct() gives back z bit-for-bit.

    Plain float64 evaluation of low + high misses z by up to one ulp on
    elements whose magnitude sits in a finer binade than the bands, so the
    split also stores the exact rounding debt fl(low + high) - z (exact by
    Sterbenz: the rounded sum lies within one ulp of z). reconstruct()
    subtracts it, which restores z exactly.
    """

    low: LatentGrid
    high: LatentGrid
    sigma: float
    recon_debt: np.ndarray | None = field(repr=False, default=None)

    def __post_init__(self):
        if self.recon_debt is not None:
            self.recon_debt.setflags(write=False)

    def reconstruct(self) -> LatentGrid:
        total = self.low.values + self.high.values
        if self.recon_debt is not None:
            total = total - self.recon_debt
        return LatentGrid(total)


@dataclass(frozen=True)
class GuidanceConfig:
    scale: float = 7.5
    negative_text: str = ""
    sigma: float = 2.0
    combine_mode: str = "filtered_sum"

    def __post_init__(self):
        if self.sigma < 0:
            raise InvalidParameterError(f"sigma must be >= 0, got {self.sigma}")
        if self.scale < 0:
            raise InvalidParameterError(f"guidance scale must be >= 0, got {self.scale}")
        if self.combine_mode not in COMBINE_MODES:
            raise InvalidParameterError(f"unknown combine_mode {self.combine_mode!r}")


def split(z: LatentGrid, sigma: float) -> FreqSplit:
    low = gaussian_blur(z, sigma)
    high = LatentGrid(z.values - low.values)
    debt = (low.values + high.values) - z.values
    parts = FreqSplit(low=low, high=high, sigma=sigma, recon_debt=debt)
    if not np.array_equal(parts.reconstruct().values, z.values):
        raise InvariantFailure("frequency split failed to reconstruct its input")
    return parts


def guided_eps(backend, z: LatentGrid, t: int, text: str, cfg: GuidanceConfig) -> LatentGrid:
    """Classifier-free guidance: eps_u + scale * (eps_c - eps_u).

    scale = 1 skips the unconditional call. Backends that apply guidance on
    their own side (one wire round-trip) advertise supports_guidance and get
    the full triple instead.
    """
    try:
        if getattr(backend, "supports_guidance", False):
            return backend.predict_eps_guided(z, t, text, cfg.negative_text, cfg.scale)
        if cfg.scale == 1.0:
            return backend.predict_eps(z, t, text)
        if cfg.scale == 0.0:
            return backend.predict_eps(z, t, cfg.negative_text)
        cond = backend.predict_eps(z, t, text)
        uncond = backend.predict_eps(z, t, cfg.negative_text)
        return LatentGrid(uncond.values + cfg.scale * (cond.values - uncond.values))
    except BackendError as exc:
        raise BackendError(f"denoise failed at t={t}: {exc}", exc.request_id) from exc


def combine_eps(eps_global: LatentGrid, eps_local: LatentGrid, cfg: GuidanceConfig) -> LatentGrid:
    """Merge the two conditioned estimates into one.

    filtered_sum keeps the low band of the global estimate and the high band
    of the local one, preserving noise scale; plain_sum adds both whole
    estimates (ablation mode, roughly doubles the variance).
    """
    same_shape(eps_global, eps_local, "eps estimates")
    if cfg.combine_mode == "plain_sum":
        return LatentGrid(eps_global.values + eps_local.values)
    low_global = gaussian_blur(eps_global, cfg.sigma)
    low_local = gaussian_blur(eps_local, cfg.sigma)
    return LatentGrid(low_global.values + eps_local.values - low_local.values)
