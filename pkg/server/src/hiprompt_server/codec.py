"""Wire payload codecs: little-endian float32 base64 tensors and PNG images."""

from __future__ import annotations

import base64
import binascii
import io

import numpy as np
from PIL import Image


class CodecError(ValueError):
    pass


def decode_f32_b64(payload: str, shape: tuple[int, ...]) -> np.ndarray:
    try:
        raw = base64.b64decode(payload.encode("ascii"), validate=True)
    except (binascii.Error, UnicodeEncodeError, AttributeError) as exc:
        raise CodecError(f"invalid base64 payload: {exc}") from exc
    count = 1
    for dim in shape:
        if dim < 1:
            raise CodecError(f"shape {shape} has a non-positive dimension")
        count *= dim
    if len(raw) != count * 4:
        raise CodecError(
            f"payload holds {len(raw)} bytes but shape {list(shape)} needs {count * 4}"
        )
    return np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(shape)


def encode_f32_b64(values: np.ndarray) -> str:
    return base64.b64encode(np.asarray(values).astype("<f4").tobytes()).decode("ascii")


def decode_png_b64(payload: str) -> np.ndarray:
    """PNG bytes -> (h, w, 3) float64 RGB in [0, 1]."""
    try:
        raw = base64.b64decode(payload.encode("ascii"), validate=True)
    except (binascii.Error, UnicodeEncodeError, AttributeError) as exc:
        raise CodecError(f"invalid base64 image: {exc}") from exc
    try:
        image = Image.open(io.BytesIO(raw)).convert("RGB")
    except Exception as exc:
        raise CodecError(f"cannot decode PNG image: {exc}") from exc
    return np.asarray(image, dtype=np.float64) / 255.0
