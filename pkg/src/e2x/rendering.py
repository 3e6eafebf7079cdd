"""Red/blue overlay rendering of attribution maps.

Values are normalized to the unit range: +1 renders pure red, -1 pure blue,
0 stays transparent; opacity scales with |value|^gamma.  Output bytes are
deterministic for fixed inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidValueError, ShapeMismatchError
from .images import displayable
from .types import Image, ImportanceMap

_RED = np.array([255.0, 0.0, 0.0])
_BLUE = np.array([0.0, 0.0, 255.0])


@dataclass(frozen=True)
class RenderParams:
    alpha: float = 0.6
    gamma: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise InvalidValueError("alpha must lie in [0, 1]")
        if self.gamma <= 0.0:
            raise InvalidValueError("gamma must be > 0")


def normalize_map(values) -> tuple[np.ndarray, bool]:
    """Divide by the max absolute value, preserving sign.

    Returns (normalized, degenerate); an all-zero input comes back as zeros
    with the degenerate flag set.  Idempotent on already-normalized input.
    """
    arr = values.per_pixel() if isinstance(values, ImportanceMap) else np.asarray(values, np.float64)
    peak = np.abs(arr).max() if arr.size else 0.0
    if peak == 0.0:
        return np.zeros_like(arr, dtype=np.float64), True
    return arr / peak, False


def render_overlay(image: Image, normalized: np.ndarray, params: RenderParams) -> np.ndarray:
    """Source-over composite of the signed overlay onto the de-meaned image.

    Returns an H x W x 4 uint8 raster (alpha channel fully opaque after
    compositing).
    """
    values = np.asarray(normalized, np.float64)
    if values.shape != (image.height, image.width):
        raise ShapeMismatchError(
            f"map shape {values.shape} != image {image.height}x{image.width}"
        )
    if np.abs(values).max(initial=0.0) > 1.0 + 1e-12:
        raise InvalidValueError("overlay input must be normalized to [-1, 1]")
    base = displayable(image).astype(np.float64)
    color = np.where(values[:, :, None] >= 0.0, _RED, _BLUE)
    a = (np.abs(values) ** params.gamma * params.alpha)[:, :, None]
    rgb = np.clip(np.rint(color * a + base * (1.0 - a)), 0, 255).astype(np.uint8)
    out = np.empty((image.height, image.width, 4), dtype=np.uint8)
    out[:, :, :3] = rgb
    out[:, :, 3] = 255
    return out
