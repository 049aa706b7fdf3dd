"""Embedded invariant suite behind the `selftest` subcommand."""

from __future__ import annotations

import numpy as np

from .backends import AnalyticDenoiser, AnalyticWorldSpec
from .grid import Kernel1D, LatentGrid, _blur_axis, gaussian_kernel
from .pipeline import TAG_BASE_INIT, stream_rng
from .prompts import FALLBACK_GLOBAL, MLLM_REFINED, refine_caption
from .schedule import ddim_ladder, ddim_step, make_schedule
from .tiling import extract, fuse, plan_patches


def _blur_with(values: np.ndarray, kernel: Kernel1D) -> np.ndarray:
    return _blur_axis(_blur_axis(values, kernel, axis=1), kernel, axis=0)


def _check_reconstruction(corrupt_kernel: bool) -> bool:
    factory = gaussian_kernel
    if corrupt_kernel:
        def factory(sigma):  # deliberately breaks unit DC gain
            k = gaussian_kernel(sigma)
            return Kernel1D(k.radius, np.asarray(k.weights) * 1.001)
    rng = np.random.default_rng(7)
    z = rng.standard_normal((16, 16, 2))
    const = np.full((12, 12, 1), 0.7)
    for sigma in (0.5, 2.0):
        kernel = factory(sigma)
        low = _blur_with(z, kernel)
        high = z - low
        debt = (low + high) - z
        if not np.array_equal((low + high) - debt, z):
            return False
        # Unit DC gain: the high band of a constant field must vanish.
        if np.max(np.abs(const - _blur_with(const, kernel))) > 1e-9:
            return False
    return True


def _check_fusion() -> bool:
    layout = plan_patches(20, 23, 8, 8, 5, 6)
    ones = [LatentGrid(np.ones((8, 8, 2))) for _ in range(layout.count)]
    if not np.array_equal(fuse(ones, layout).values, np.ones((20, 23, 2))):
        return False
    z = LatentGrid(np.random.default_rng(8).standard_normal((20, 23, 2)))
    patches = [extract(z, layout, i) for i in range(layout.count)]
    return float(np.max(np.abs(fuse(patches, layout).values - z.values))) <= 1e-9


def _check_sampler_moments() -> bool:
    # 256 independent samples as channels of one grid (all ops are pointwise).
    schedule = make_schedule()
    world = AnalyticWorldSpec(data_std=0.5, channels=256, mu_overrides=(("probe", 0.3),))
    backend = AnalyticDenoiser(world, schedule, 4, 4)
    rng = stream_rng(11, TAG_BASE_INIT)
    z = LatentGrid(rng.standard_normal((4, 4, 256)))
    ladder = ddim_ladder(schedule.steps, schedule.steps, schedule.steps)
    for t, t_prev in zip(ladder, ladder[1:] + [0]):
        eps = backend.predict_eps(z, t, "probe")
        noise = LatentGrid(rng.standard_normal(z.shape))
        z = ddim_step(z, eps, t, t_prev, 1.0, noise, schedule)
    mean = float(z.values.mean())
    var = float(z.values.var())
    return abs(mean - 0.3) < 0.03 and abs(var / 0.25 - 1.0) < 0.15


def _check_refinement() -> bool:
    scores = {"palm": 0.9, "tree": 0.8, "corgi": 0.1, "dog": 0.2}
    if refine_caption("a palm tree corgi dog", scores, "g") != ("palm tree", MLLM_REFINED):
        return False
    if refine_caption("an image of background", {}, "g") != ("g", FALLBACK_GLOBAL):
        return False
    equal = {"sand": 0.4, "dune": 0.4}
    return refine_caption("sand dune", equal, "g") == ("sand dune", MLLM_REFINED)


def selftest(corrupt_kernel: bool = False) -> tuple[str, bool]:
    """Run the embedded checks; returns (report text, all passed)."""
    checks = [
        ("reconstruction_identity", lambda: _check_reconstruction(corrupt_kernel)),
        ("fusion_partition_of_unity", _check_fusion),
        ("analytic_sampler_moments", _check_sampler_moments),
        ("refinement_fixtures", _check_refinement),
    ]
    lines = []
    all_ok = True
    for name, check in checks:
        ok = bool(check())
        all_ok &= ok
        lines.append(f"{'ok' if ok else 'FAIL'} {name}")
    lines.append("selftest passed" if all_ok else "selftest FAILED")
    return "\n".join(lines) + "\n", all_ok
