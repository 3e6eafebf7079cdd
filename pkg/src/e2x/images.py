"""8-bit PNG input, mean-subtraction preprocessing, and raster output."""

from __future__ import annotations

from typing import Optional, Sequence, Union

import numpy as np
from PIL import Image as PILImage

from .errors import InvalidValueError
from .types import Image

MeanSpec = Union[str, Sequence[float], None]


def preprocess(raw: np.ndarray, channel_mean: MeanSpec = "auto") -> Image:
    """Float raster from 8-bit pixel data, minus a configured per-channel
    mean so the zero reference equals the distribution mean.

    ``channel_mean``: "auto" subtracts this image's own per-channel mean,
    None subtracts nothing, a sequence gives explicit values.
    """
    data = np.asarray(raw, np.float64)
    if data.ndim == 2:
        data = data[:, :, None]
    if channel_mean is None:
        mean = np.zeros(data.shape[2])
    elif isinstance(channel_mean, str):
        if channel_mean != "auto":
            raise InvalidValueError(f"unknown channel_mean {channel_mean!r}")
        mean = data.mean(axis=(0, 1))
    else:
        mean = np.asarray(channel_mean, np.float64)
    return Image(data - mean, mean)


def load_image(path, channel_mean: MeanSpec = "auto") -> Image:
    """Read an 8-bit PNG (or any Pillow-readable raster) and preprocess it."""
    with PILImage.open(path) as img:
        if img.mode in ("RGBA", "P", "LA"):
            img = img.convert("RGB")
        elif img.mode not in ("RGB", "L"):
            img = img.convert("RGB")
        raw = np.asarray(img)
    return preprocess(raw, channel_mean)


def displayable(image: Image) -> np.ndarray:
    """Undo the mean subtraction and clamp to 8-bit RGB."""
    data = image.data + image.channel_mean
    if image.channels == 1:
        data = np.repeat(data, 3, axis=2)
    return np.clip(np.rint(data), 0, 255).astype(np.uint8)


def save_png(array: np.ndarray, path) -> None:
    arr = np.asarray(array)
    if arr.dtype != np.uint8:
        raise InvalidValueError("save_png expects uint8 data")
    mode = {1: "L", 3: "RGB", 4: "RGBA"}.get(arr.shape[2] if arr.ndim == 3 else 1)
    if arr.ndim == 2:
        PILImage.fromarray(arr, mode="L").save(path, format="PNG")
    else:
        PILImage.fromarray(arr, mode=mode).save(path, format="PNG")


def save_image_png(image: Image, path) -> None:
    save_png(displayable(image), path)
