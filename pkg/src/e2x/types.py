"""Shared domain types.

All rasters are stored channel-last, row-major, float64; every type is
immutable after construction (backing arrays are write-locked) and safe to
share across concurrent workers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Optional

import numpy as np

from .errors import (
    InvalidValueError,
    LengthMismatchError,
    NonFiniteValueError,
    ShapeMismatchError,
)


def _locked(arr: np.ndarray, dtype=np.float64) -> np.ndarray:
    out = np.ascontiguousarray(arr, dtype=dtype)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class Image:
    """Dense H x W x C float raster, mean-subtracted by convention.

    ``channel_mean`` records what preprocessing subtracted per channel so the
    displayable image can be reconstructed; zeros when nothing was subtracted.
    """

    data: np.ndarray
    channel_mean: np.ndarray = None  # type: ignore[assignment]

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3:
            raise ShapeMismatchError(f"image must be HxWxC, got shape {data.shape}")
        if data.shape[2] not in (1, 3):
            raise ShapeMismatchError(f"channels must be 1 or 3, got {data.shape[2]}")
        if data.shape[0] < 1 or data.shape[1] < 1:
            raise ShapeMismatchError(f"empty image {data.shape}")
        if not np.all(np.isfinite(data)):
            raise NonFiniteValueError("image contains NaN or Inf")
        mean = self.channel_mean
        mean = np.zeros(data.shape[2]) if mean is None else np.asarray(mean, np.float64)
        if mean.shape != (data.shape[2],):
            raise ShapeMismatchError("channel_mean must have one entry per channel")
        if not np.all(np.isfinite(mean)):
            raise NonFiniteValueError("channel_mean contains NaN or Inf")
        object.__setattr__(self, "data", _locked(data))
        object.__setattr__(self, "channel_mean", _locked(mean))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    def with_data(self, data: np.ndarray) -> "Image":
        """Same metadata, new pixel values."""
        return Image(data, self.channel_mean)


@dataclass(frozen=True, eq=False)
class Segmentation:
    """Per-pixel segment labels in [0, num_segments); every label occurs."""

    labels: np.ndarray
    num_segments: int = 0

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 2:
            raise ShapeMismatchError(f"labels must be HxW, got shape {labels.shape}")
        if not np.issubdtype(labels.dtype, np.integer):
            raise InvalidValueError("labels must be integers")
        labels = labels.astype(np.int64)
        m = int(self.num_segments) or int(labels.max()) + 1
        if labels.min() < 0 or labels.max() >= m:
            raise InvalidValueError(f"labels must lie in [0, {m})")
        counts = np.bincount(labels.ravel(), minlength=m)
        if counts.min() == 0:
            missing = int(np.flatnonzero(counts == 0)[0])
            raise InvalidValueError(f"label {missing} has no pixels (gap in [0, {m}))")
        object.__setattr__(self, "labels", _locked(labels, np.int64))
        object.__setattr__(self, "num_segments", m)

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    def counts(self) -> np.ndarray:
        return np.bincount(self.labels.ravel(), minlength=self.num_segments)

    def matches(self, image: Image) -> bool:
        return self.labels.shape == (image.height, image.width)


@dataclass(frozen=True, eq=False)
class SimplifiedInput:
    """Binary presence vector over segments."""

    bits: np.ndarray

    def __post_init__(self):
        bits = np.asarray(self.bits)
        if bits.ndim != 1:
            raise ShapeMismatchError("bits must be a vector")
        vals = np.unique(bits)
        if not np.all(np.isin(vals, (0, 1))):
            raise InvalidValueError("bits must be 0 or 1")
        object.__setattr__(self, "bits", _locked(bits, np.uint8))

    def __len__(self) -> int:
        return self.bits.shape[0]


@dataclass(frozen=True, eq=False)
class ImportanceVector:
    """Per-segment attribution values plus the baseline term."""

    phi: np.ndarray
    phi0: float = 0.0

    def __post_init__(self):
        phi = np.asarray(self.phi, np.float64)
        if phi.ndim != 1:
            raise ShapeMismatchError("phi must be a vector")
        if not (np.all(np.isfinite(phi)) and np.isfinite(self.phi0)):
            raise NonFiniteValueError("importance values must be finite")
        object.__setattr__(self, "phi", _locked(phi))
        object.__setattr__(self, "phi0", float(self.phi0))

    def __len__(self) -> int:
        return self.phi.shape[0]

    def broadcast(self, seg: Segmentation) -> np.ndarray:
        """Per-pixel H x W array holding each pixel's segment value."""
        if len(self) != seg.num_segments:
            raise LengthMismatchError(
                f"vector has {len(self)} entries, segmentation {seg.num_segments}"
            )
        return self.phi[seg.labels]


@dataclass(frozen=True, eq=False)
class ImportanceMap:
    """Per-pixel attribution raster.

    ``values`` is H x W, or H x W x C for the pre-aggregation form produced
    by the gradient methods (one value per input coordinate).
    """

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, np.float64)
        if values.ndim not in (2, 3):
            raise ShapeMismatchError(f"map must be HxW or HxWxC, got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise NonFiniteValueError("map contains NaN or Inf")
        object.__setattr__(self, "values", _locked(values))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def per_pixel(self) -> np.ndarray:
        """H x W view with channel values summed at each pixel."""
        if self.values.ndim == 2:
            return self.values
        return self.values.sum(axis=2)


@dataclass(frozen=True, eq=False)
class ReferenceInput:
    """The "feature absent" stand-in: zero, per-channel mean, or an image."""

    mode: Literal["zero", "channel-mean", "image"] = "zero"
    image: Optional[Image] = None

    def __post_init__(self):
        if self.mode not in ("zero", "channel-mean", "image"):
            raise InvalidValueError(f"unknown reference mode {self.mode!r}")
        if self.mode == "image" and self.image is None:
            raise InvalidValueError("mode 'image' needs an explicit image")

    def resolve(self, target: Image) -> np.ndarray:
        """Reference raster matching ``target``'s shape."""
        if self.mode == "zero":
            return np.zeros(target.shape)
        if self.mode == "channel-mean":
            mean = target.data.mean(axis=(0, 1))
            return np.broadcast_to(mean, target.shape).copy()
        assert self.image is not None
        if self.image.shape != target.shape:
            raise ShapeMismatchError(
                f"reference shape {self.image.shape} != image shape {target.shape}"
            )
        return np.array(self.image.data)

    def is_zero(self) -> bool:
        return self.mode == "zero" or (
            self.mode == "image" and not np.any(self.image.data)  # type: ignore[union-attr]
        )


ZERO_REFERENCE = ReferenceInput("zero")


@dataclass(frozen=True, eq=False)
class WeightSample:
    """One per-segment weight vector on the discrete grid {k/(K-1)}."""

    w: np.ndarray
    num_levels: int

    def __post_init__(self):
        w = np.asarray(self.w, np.float64)
        if w.ndim != 1:
            raise ShapeMismatchError("w must be a vector")
        if self.num_levels < 2:
            raise InvalidValueError("need at least 2 weight levels")
        if w.min() < 0.0 or w.max() > 1.0:
            raise InvalidValueError("weights must lie in [0, 1]")
        lv = w * (self.num_levels - 1)
        if not np.allclose(lv, np.rint(lv), rtol=0.0, atol=1e-12):
            raise InvalidValueError("weights must sit on the level grid")
        object.__setattr__(self, "w", _locked(w))

    @classmethod
    def from_levels(cls, levels: np.ndarray, num_levels: int) -> "WeightSample":
        return cls(np.asarray(levels, np.float64) / (num_levels - 1), num_levels)


@dataclass(frozen=True)
class Box:
    """Axis-aligned pixel box, xmin < xmax and ymin < ymax."""

    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def __post_init__(self):
        if not all(np.isfinite([self.xmin, self.ymin, self.xmax, self.ymax])):
            raise NonFiniteValueError("box coordinates must be finite")
        if self.xmin >= self.xmax or self.ymin >= self.ymax:
            raise InvalidValueError(f"degenerate box {self}")
        if self.xmin < 0 or self.ymin < 0:
            raise InvalidValueError(f"box extends outside the image: {self}")

    @property
    def width(self) -> float:
        return self.xmax - self.xmin

    @property
    def height(self) -> float:
        return self.ymax - self.ymin

    def area(self) -> float:
        return self.width * self.height

    def expand(self, area_factor: float, bounds: tuple[int, int]) -> "Box":
        """Scale both sides by sqrt(area_factor) about the center, clamped
        to an (H, W) bound."""
        h, w = bounds
        s = float(np.sqrt(area_factor))
        cx, cy = (self.xmin + self.xmax) / 2.0, (self.ymin + self.ymax) / 2.0
        hw, hh = self.width * s / 2.0, self.height * s / 2.0
        return Box(
            max(0.0, cx - hw),
            max(0.0, cy - hh),
            min(float(w), cx + hw),
            min(float(h), cy + hh),
        )


@dataclass(frozen=True)
class Detection:
    """One detector output, targetable for explanation via output_index."""

    box: Box
    class_id: int
    confidence: float
    output_index: int

    def __post_init__(self):
        if not np.isfinite(self.confidence) or not 0.0 <= self.confidence <= 1.0:
            raise InvalidValueError(f"confidence must be in [0, 1], got {self.confidence}")
        if self.output_index < 0:
            raise InvalidValueError("output_index must be non-negative")


@dataclass(frozen=True)
class GroundTruth:
    box: Box
    class_id: int


def validate(obj) -> None:
    """Re-run construction invariants; raises on violation.

    Constructors already validate, so this exists for callers holding
    objects of unknown provenance.
    """
    if isinstance(obj, Image):
        Image(obj.data, obj.channel_mean)
    elif isinstance(obj, Segmentation):
        Segmentation(obj.labels, obj.num_segments)
    elif isinstance(obj, SimplifiedInput):
        SimplifiedInput(obj.bits)
    elif isinstance(obj, ImportanceVector):
        ImportanceVector(obj.phi, obj.phi0)
    elif isinstance(obj, ImportanceMap):
        ImportanceMap(obj.values)
    elif isinstance(obj, WeightSample):
        WeightSample(obj.w, obj.num_levels)
    else:
        raise InvalidValueError(f"no validator for {type(obj).__name__}")
