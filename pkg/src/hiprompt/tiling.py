"""Sliding-window patch planning, extraction, and overlap-average fusion."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameterError, ShapeMismatchError
from .grid import LatentGrid


@dataclass(frozen=True)
class PatchLayout:
    """Q fully-in-bounds window placements plus per-pixel overlap counts."""

    grid_h: int
    grid_w: int
    patch_h: int
    patch_w: int
    stride_h: int
    stride_w: int
    origins: tuple[tuple[int, int], ...]
    coverage: np.ndarray

    def __post_init__(self):
        self.coverage.setflags(write=False)

    @property
    def count(self) -> int:
        return len(self.origins)


def _axis_origins(size: int, patch: int, stride: int) -> list[int]:
    starts = list(range(0, size - patch + 1, stride))
    # Clamp the final window so non-divisible sizes stay fully covered.
    if starts[-1] != size - patch:
        starts.append(size - patch)
    return starts


def plan_patches(
    grid_h: int,
    grid_w: int,
    patch_h: int,
    patch_w: int,
    stride_h: int,
    stride_w: int,
) -> PatchLayout:
    """Row-major sliding-window origins with the last window clamped in-bounds."""
    if patch_h > grid_h or patch_w > grid_w:
        raise InvalidParameterError(
            f"patch {patch_h}x{patch_w} larger than grid {grid_h}x{grid_w}"
        )
    if min(patch_h, patch_w) < 1 or min(stride_h, stride_w) < 1:
        raise InvalidParameterError("patch and stride must be >= 1")
    rows = _axis_origins(grid_h, patch_h, stride_h)
    cols = _axis_origins(grid_w, patch_w, stride_w)
    origins = tuple((r, c) for r in rows for c in cols)
    coverage = np.zeros((grid_h, grid_w), dtype=np.int64)
    for r, c in origins:
        coverage[r : r + patch_h, c : c + patch_w] += 1
    return PatchLayout(grid_h, grid_w, patch_h, patch_w, stride_h, stride_w, origins, coverage)


def extract(z: LatentGrid, layout: PatchLayout, i: int) -> LatentGrid:
    """Copy of the window at origins[i]."""
    if not 0 <= i < layout.count:
        raise IndexError(f"patch index {i} outside [0, {layout.count})")
    if (z.height, z.width) != (layout.grid_h, layout.grid_w):
        raise ShapeMismatchError(
            f"grid {z.height}x{z.width} does not match layout {layout.grid_h}x{layout.grid_w}"
        )
    r, c = layout.origins[i]
    return LatentGrid(z.values[r : r + layout.patch_h, c : c + layout.patch_w, :].copy())


def fuse(patches: list[LatentGrid], layout: PatchLayout) -> LatentGrid:
    """Overlap-average: per-pixel sum of contributors divided by coverage.

    Accumulates in origin order so results are independent of how the patch
    values were produced (workers may compute them in any order).
    """
    if len(patches) != layout.count:
        raise ShapeMismatchError(f"expected {layout.count} patches, got {len(patches)}")
    channels = patches[0].channels
    expected = (layout.patch_h, layout.patch_w, channels)
    acc = np.zeros((layout.grid_h, layout.grid_w, channels))
    for patch, (r, c) in zip(patches, layout.origins):
        if patch.shape != expected:
            raise ShapeMismatchError(f"patch shape {patch.shape} != expected {expected}")
        acc[r : r + layout.patch_h, c : c + layout.patch_w, :] += patch.values
    acc /= layout.coverage[:, :, None]
    return LatentGrid(acc)


def format_layout(layout: PatchLayout) -> str:
    """Debug dump: 'i row col' lines plus a coverage histogram."""
    lines = [f"{i} {r} {c}" for i, (r, c) in enumerate(layout.origins)]
    values, counts = np.unique(layout.coverage, return_counts=True)
    hist = " ".join(f"{int(v)}:{int(n)}" for v, n in zip(values, counts))
    lines.append(f"coverage {hist}")
    return "\n".join(lines) + "\n"
