"""Noise-schedule tables, the forward noising map, and the DDIM reverse step.

Timesteps are 1-based: t in [1, T], with alpha_cumprod(0) defined as 1 so the
final reverse step returns the clean estimate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateTimestepError, InvalidParameterError
from .grid import LatentGrid, same_shape

DEFAULT_STEPS = 1000
DEFAULT_BETA_START = 0.00085
DEFAULT_BETA_END = 0.012
DEFAULT_KIND = "scaled_linear"


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step beta table and its running signal product alpha_cumprod."""

    betas: np.ndarray
    alphas_cumprod: np.ndarray

    def __post_init__(self):
        for name in ("betas", "alphas_cumprod"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            object.__setattr__(self, name, arr)
            arr.setflags(write=False)
        if self.betas.shape != self.alphas_cumprod.shape or self.betas.ndim != 1:
            raise InvalidParameterError("betas and alphas_cumprod must be equal-length 1-D tables")

    @property
    def steps(self) -> int:
        return int(self.betas.size)

    def alpha_cumprod(self, t: int) -> float:
        """Signal fraction at step t; t = 0 is the clean-data convention (1.0)."""
        if t == 0:
            return 1.0
        if not 1 <= t <= self.steps:
            raise InvalidParameterError(f"timestep {t} outside [0, {self.steps}]")
        return float(self.alphas_cumprod[t - 1])


def make_schedule(
    steps: int = DEFAULT_STEPS,
    beta_start: float = DEFAULT_BETA_START,
    beta_end: float = DEFAULT_BETA_END,
    kind: str = DEFAULT_KIND,
) -> NoiseSchedule:
    """Build a schedule; scaled_linear interpolates sqrt(beta) and squares."""
    if steps < 1:
        raise InvalidParameterError(f"steps must be >= 1, got {steps}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise InvalidParameterError(
            f"betas must satisfy 0 < start <= end < 1, got {beta_start}..{beta_end}"
        )
    if kind == "linear":
        betas = np.linspace(beta_start, beta_end, steps)
    elif kind == "scaled_linear":
        betas = np.linspace(math.sqrt(beta_start), math.sqrt(beta_end), steps) ** 2
    else:
        raise InvalidParameterError(f"unknown schedule kind {kind!r}")
    return NoiseSchedule(betas=betas, alphas_cumprod=np.cumprod(1.0 - betas))


def q_sample(x0: LatentGrid, t: int, eps: LatentGrid, s: NoiseSchedule) -> LatentGrid:
    """Forward noising: sqrt(ac_t)*x0 + sqrt(1-ac_t)*eps."""
    same_shape(x0, eps, "x0 and eps")
    ac = s.alpha_cumprod(t)
    return LatentGrid(math.sqrt(ac) * x0.values + math.sqrt(1.0 - ac) * eps.values)


def predict_x0(z_t: LatentGrid, eps_hat: LatentGrid, t: int, s: NoiseSchedule) -> LatentGrid:
    """Invert the forward map: (z_t - sqrt(1-ac_t)*eps_hat) / sqrt(ac_t)."""
    same_shape(z_t, eps_hat, "z_t and eps_hat")
    ac = s.alpha_cumprod(t)
    if ac == 0.0:
        raise DegenerateTimestepError(f"alpha_cumprod({t}) = 0; cannot recover x0")
    return LatentGrid((z_t.values - math.sqrt(1.0 - ac) * eps_hat.values) / math.sqrt(ac))


def ddim_step(
    z_t: LatentGrid,
    eps_hat: LatentGrid,
    t: int,
    t_prev: int,
    eta: float,
    noise: LatentGrid | None,
    s: NoiseSchedule,
) -> LatentGrid:
    """One reverse step t -> t_prev; eta = 0 is deterministic, eta = 1 ancestral-like."""
    if t_prev >= t:
        raise InvalidParameterError(f"steps must decrease, got t={t} -> t_prev={t_prev}")
    if not 0.0 <= eta <= 1.0:
        raise InvalidParameterError(f"eta must lie in [0, 1], got {eta}")
    if eta > 0.0 and noise is None:
        raise InvalidParameterError("eta > 0 requires a noise grid")
    x0 = predict_x0(z_t, eps_hat, t, s)
    ac_t = s.alpha_cumprod(t)
    ac_prev = s.alpha_cumprod(t_prev)
    sigma = eta * math.sqrt((1.0 - ac_prev) / (1.0 - ac_t)) * math.sqrt(1.0 - ac_t / ac_prev)
    out = math.sqrt(ac_prev) * x0.values
    out = out + math.sqrt(max(1.0 - ac_prev - sigma * sigma, 0.0)) * eps_hat.values
    if sigma > 0.0:
        same_shape(z_t, noise, "z_t and noise")
        out = out + sigma * noise.values
    return LatentGrid(out)


def ddim_ladder(t_start: int, n_steps: int, total_steps: int) -> list[int]:
    """Uniform strictly-decreasing timesteps from t_start down (t_prev chain ends at 0)."""
    if not 1 <= t_start <= total_steps:
        raise InvalidParameterError(f"t_start {t_start} outside [1, {total_steps}]")
    if n_steps < 1:
        raise InvalidParameterError(f"ladder needs >= 1 step, got {n_steps}")
    steps = sorted({max(1, round(t_start * k / n_steps)) for k in range(1, n_steps + 1)}, reverse=True)
    return steps


def format_schedule(s: NoiseSchedule) -> str:
    """One line per step: 't beta alpha_cumprod' with 9 significant digits."""
    lines = [
        f"{t + 1} {s.betas[t]:.9g} {s.alphas_cumprod[t]:.9g}" for t in range(s.steps)
    ]
    return "\n".join(lines) + "\n"
