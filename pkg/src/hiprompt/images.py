"""Latent normalization and image byte encoding (PNG, PPM, raw grid)."""

from __future__ import annotations

import io

import numpy as np
from PIL import Image

from .errors import InvalidParameterError
from .grid import LatentGrid, grid_to_bytes

IMAGE_FORMATS = ("png", "ppm", "raw")


def normalize_to_image(grid: LatentGrid, center: float, spread: float) -> LatentGrid:
    """Map latent values in [center - spread, center + spread] onto a [0, 255]
    grayscale image replicated to 3 channels."""
    if spread <= 0:
        raise InvalidParameterError(f"normalization spread must be > 0, got {spread}")
    gray = grid.values.mean(axis=2)
    scaled = (gray - (center - spread)) / (2.0 * spread) * 255.0
    scaled = np.clip(scaled, 0.0, 255.0)
    return LatentGrid(np.repeat(scaled[:, :, None], 3, axis=2))


def _to_rgb_bytes(grid: LatentGrid) -> np.ndarray:
    if grid.channels != 3:
        raise InvalidParameterError(f"image encoding needs 3 channels, got {grid.channels}")
    values = grid.values
    if values.min() < 0.0 or values.max() > 255.0:
        raise InvalidParameterError("image grid values must lie in [0, 255]")
    return np.rint(values).astype(np.uint8)


def encode_image(grid: LatentGrid, fmt: str = "png") -> bytes:
    """Deterministic bytes for a normalized 3-channel grid."""
    if fmt == "raw":
        return grid_to_bytes(grid)
    rgb = _to_rgb_bytes(grid)
    if fmt == "ppm":
        header = f"P6\n{grid.width} {grid.height}\n255\n".encode("ascii")
        return header + rgb.tobytes()
    if fmt == "png":
        buf = io.BytesIO()
        Image.fromarray(rgb, mode="RGB").save(buf, format="PNG")
        return buf.getvalue()
    raise InvalidParameterError(f"unknown image format {fmt!r}")
