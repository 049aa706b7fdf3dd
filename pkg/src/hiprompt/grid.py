"""Dense real-valued latent grids and their spatial primitives.

A grid is a height x width x channels float64 field stored row-major. All
operations are pure: they take grids, return new grids, and enforce that
every produced value is finite.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from os import PathLike
from typing import BinaryIO, Iterable

import numpy as np

from .errors import InvalidParameterError, ShapeMismatchError

_GRID_HEADER = struct.Struct("<III")


def _as_array(values: np.ndarray | Iterable) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 3:
        raise InvalidParameterError(f"grid values must be 3-D (h, w, c), got ndim={arr.ndim}")
    if min(arr.shape) < 1:
        raise InvalidParameterError(f"grid dimensions must be >= 1, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidParameterError("grid contains non-finite values")
    return arr


@dataclass(frozen=True)
class LatentGrid:
    """Immutable (h, w, c) float64 field; carrier for latents and noise estimates."""

    values: np.ndarray

    def __post_init__(self):
        arr = _as_array(self.values)
        if arr is not self.values:
            object.__setattr__(self, "values", arr)
        self.values.setflags(write=False)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def channels(self) -> int:
        return self.values.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.values.shape

    @classmethod
    def from_flat(cls, height: int, width: int, channels: int, data: Iterable) -> "LatentGrid":
        flat = np.asarray(list(data) if not isinstance(data, np.ndarray) else data, dtype=np.float64)
        if flat.size != height * width * channels:
            raise InvalidParameterError(
                f"flat data length {flat.size} != {height}x{width}x{channels}"
            )
        return cls(flat.reshape(height, width, channels))

    @classmethod
    def zeros(cls, height: int, width: int, channels: int) -> "LatentGrid":
        return cls(np.zeros((height, width, channels)))

    @classmethod
    def full(cls, height: int, width: int, channels: int, value: float) -> "LatentGrid":
        return cls(np.full((height, width, channels), float(value)))

    def flat(self) -> np.ndarray:
        return self.values.reshape(-1).copy()


def same_shape(a: LatentGrid, b: LatentGrid, what: str = "grids") -> None:
    if a.shape != b.shape:
        raise ShapeMismatchError(f"{what} differ in shape: {a.shape} vs {b.shape}")


@dataclass(frozen=True)
class Kernel1D:
    """Symmetric non-negative unit-sum 1-D filter with 2*radius+1 taps."""

    radius: int
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        object.__setattr__(self, "weights", w)
        w.setflags(write=False)
        if w.size != 2 * self.radius + 1:
            raise InvalidParameterError("kernel weight count must be 2*radius+1")


def gaussian_kernel(sigma: float) -> Kernel1D:
    """Truncated Gaussian taps at ceil(3*sigma), renormalized to unit sum.

    Renormalization keeps DC gain exactly 1 so low/high splits reconstruct.
    """
    if not math.isfinite(sigma) or sigma < 0:
        raise InvalidParameterError(f"sigma must be finite and >= 0, got {sigma}")
    if sigma == 0:
        return Kernel1D(0, np.array([1.0]))
    radius = math.ceil(3.0 * sigma)
    taps = np.arange(-radius, radius + 1, dtype=np.float64)
    weights = np.exp(-(taps**2) / (2.0 * sigma * sigma))
    weights /= weights.sum()
    return Kernel1D(radius, weights)


def _blur_axis(arr: np.ndarray, kernel: Kernel1D, axis: int) -> np.ndarray:
    if kernel.radius == 0:
        return kernel.weights[0] * arr
    r = kernel.radius
    pad = [(0, 0)] * arr.ndim
    pad[axis] = (r, r)
    # 'reflect' mirrors without repeating the edge sample.
    padded = np.pad(arr, pad, mode="reflect")
    out = np.zeros_like(arr)
    index = [slice(None)] * arr.ndim
    n = arr.shape[axis]
    for j, w in enumerate(kernel.weights):
        index[axis] = slice(j, j + n)
        out += w * padded[tuple(index)]
    return out


def gaussian_blur(grid: LatentGrid, sigma: float) -> LatentGrid:
    """Separable Gaussian blur (horizontal then vertical), reflect padding."""
    kernel = gaussian_kernel(sigma)
    out = _blur_axis(grid.values, kernel, axis=1)
    out = _blur_axis(out, kernel, axis=0)
    return LatentGrid(out)


def _catmull_rom(distance: np.ndarray) -> np.ndarray:
    # Cubic convolution kernel with a = -0.5.
    d = np.abs(distance)
    near = (1.5 * d - 2.5) * d * d + 1.0
    far = ((-0.5 * d + 2.5) * d - 4.0) * d + 2.0
    return np.where(d <= 1.0, near, np.where(d < 2.0, far, 0.0))

_RESAMPLE_METHODS = ("nearest", "bilinear", "bicubic")


def _resample_axis(arr: np.ndarray, new_n: int, axis: int, method: str) -> np.ndarray:
    n = arr.shape[axis]
    if new_n == n:
        return arr
    scale = n / new_n
    centers = (np.arange(new_n) + 0.5) * scale - 0.5
    if method == "nearest":
        idx = np.clip(np.floor((np.arange(new_n) + 0.5) * scale).astype(np.int64), 0, n - 1)
        return np.take(arr, idx, axis=axis)
    base = np.floor(centers).astype(np.int64)
    frac = centers - base
    if method == "bilinear":
        offsets = np.array([0, 1])
        weights = np.stack([1.0 - frac, frac], axis=1)
    else:  # bicubic
        offsets = np.array([-1, 0, 1, 2])
        weights = _catmull_rom(frac[:, None] - offsets[None, :])
    taps = np.clip(base[:, None] + offsets[None, :], 0, n - 1)
    shape = [1] * arr.ndim
    shape[axis] = new_n
    out = np.zeros_like(np.take(arr, taps[:, 0], axis=axis))
    for k in range(offsets.size):
        out += weights[:, k].reshape(shape) * np.take(arr, taps[:, k], axis=axis)
    return out


def resample(grid: LatentGrid, new_h: int, new_w: int, method: str = "bicubic") -> LatentGrid:
    """Per-channel resampling with half-pixel-centered coordinates.

    Bicubic uses the Catmull-Rom kernel (a = -0.5); out-of-range taps clamp
    to the edge sample.
    """
    if method not in _RESAMPLE_METHODS:
        raise InvalidParameterError(f"unknown resample method {method!r}")
    if new_h < 1 or new_w < 1:
        raise InvalidParameterError(f"target size must be >= 1, got {new_h}x{new_w}")
    out = _resample_axis(grid.values, new_h, axis=0, method=method)
    out = _resample_axis(out, new_w, axis=1, method=method)
    return LatentGrid(out)


def moments(grid: LatentGrid) -> tuple[float, float]:
    """Population mean and variance over all entries."""
    return float(grid.values.mean()), float(grid.values.var())


def write_grid(target: str | PathLike | BinaryIO, grid: LatentGrid) -> None:
    """Raw grid format: '<III' header (h, w, c) then float32 LE values, row-major."""
    payload = grid_to_bytes(grid)
    if hasattr(target, "write"):
        target.write(payload)
    else:
        with open(target, "wb") as fh:
            fh.write(payload)


def grid_to_bytes(grid: LatentGrid) -> bytes:
    header = _GRID_HEADER.pack(grid.height, grid.width, grid.channels)
    return header + grid.values.astype("<f4").tobytes()


def read_grid(source: str | PathLike | BinaryIO) -> LatentGrid:
    if hasattr(source, "read"):
        blob = source.read()
    else:
        with open(source, "rb") as fh:
            blob = fh.read()
    return grid_from_bytes(blob)


def grid_from_bytes(blob: bytes) -> LatentGrid:
    if len(blob) < _GRID_HEADER.size:
        raise InvalidParameterError("grid file truncated: missing header")
    h, w, c = _GRID_HEADER.unpack_from(blob)
    expected = _GRID_HEADER.size + h * w * c * 4
    if h < 1 or w < 1 or c < 1:
        raise InvalidParameterError(f"grid file header has degenerate shape {h}x{w}x{c}")
    if len(blob) != expected:
        raise InvalidParameterError(
            f"grid file length {len(blob)} != expected {expected} for shape {h}x{w}x{c}"
        )
    flat = np.frombuffer(blob, dtype="<f4", offset=_GRID_HEADER.size).astype(np.float64)
    return LatentGrid(flat.reshape(h, w, c))
