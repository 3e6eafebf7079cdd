"""The attribution estimators and the masking/aggregation mappings.

Five routes to per-feature importance over one segmentation:

* exact Shapley values by coalition enumeration (the oracle),
* LIME-style weighted ridge regression on masked samples, which with the
  Shapley kernel and full enumeration recovers the oracle exactly,
* integrated gradients along the reference-to-input path,
* the segment average of integrated gradients,
* the gradient-weighted estimator (``e2x``): per-segment weights sampled
  uniformly from the discrete grid {k/(K-1)} replace the shared linear
  path, per-pixel products x * mean-gradient are then segment-averaged,
* occlusion differences on a stride grid with bilinear interpolation.

Every estimator is pure given (model, inputs, params, seed); sampled
estimators consume the documented SplitMix64 stream in sample-major,
segment-minor order.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Literal, Optional, Sequence

import numpy as np

from . import models as _models
from .errors import (
    InvalidReferenceError,
    InvalidValueError,
    LengthMismatchError,
    ShapeMismatchError,
    SingularSystemError,
    TooManyFeaturesError,
    WindowTooLargeError,
)
from .models import OutputSelector
from .rng import SplitMix64
from .types import (
    Box,
    Image,
    ImportanceMap,
    ImportanceVector,
    ReferenceInput,
    Segmentation,
    SimplifiedInput,
    WeightSample,
    ZERO_REFERENCE,
)

MAX_EXACT_FEATURES = 20


@dataclass(frozen=True)
class LimeParams:
    """Sampling and regression knobs for the masked-regression estimator.

    ``kernel="shapley"`` swaps the exponential kernel for Shapley-kernel
    weights and requires ``enumerate_all`` (the constrained solve needs the
    empty and full coalitions).
    """

    num_samples: int = 0
    kernel_width: float = 0.25
    ridge_lambda: float = 1e-3
    seed: int = 0
    kernel: Literal["exponential", "shapley"] = "exponential"
    enumerate_all: bool = False

    def __post_init__(self):
        if not self.enumerate_all and self.num_samples < 1:
            raise InvalidValueError("num_samples must be >= 1 when sampling")
        if self.kernel_width <= 0:
            raise InvalidValueError("kernel_width must be > 0")
        if self.ridge_lambda < 0:
            raise InvalidValueError("ridge_lambda must be >= 0")
        if self.kernel == "shapley" and not self.enumerate_all:
            raise InvalidValueError("shapley kernel weights require enumerate_all")
        if self.kernel not in ("exponential", "shapley"):
            raise InvalidValueError(f"unknown kernel {self.kernel!r}")


@dataclass(frozen=True)
class E2xParams:
    num_samples: int
    seed: int = 0

    def __post_init__(self):
        if self.num_samples < 2:
            raise InvalidValueError("the weight grid k/(K-1) needs K >= 2")


@dataclass(frozen=True)
class PdaParams:
    window: tuple[int, int] = (8, 8)
    stride: int = 4
    fill: Literal["mean", "reference"] = "mean"

    def __post_init__(self):
        wh, ww = self.window
        if wh < 1 or ww < 1:
            raise InvalidValueError("window must be at least 1x1")
        if self.stride < 1:
            raise InvalidValueError("stride must be >= 1")
        if self.fill not in ("mean", "reference"):
            raise InvalidValueError(f"unknown fill {self.fill!r}")


def _as_bits(bits) -> np.ndarray:
    if isinstance(bits, SimplifiedInput):
        return bits.bits
    return SimplifiedInput(np.asarray(bits)).bits


def mask_apply(
    image: Image, seg: Segmentation, bits, reference: Optional[ReferenceInput] = None
) -> Image:
    """Pixel p keeps the image value where bits[label(p)] = 1, otherwise it
    takes the reference value at p."""
    b = _as_bits(bits)
    if not seg.matches(image):
        raise ShapeMismatchError("segmentation does not match the image")
    if b.shape[0] != seg.num_segments:
        raise LengthMismatchError(
            f"{b.shape[0]} bits for {seg.num_segments} segments"
        )
    ref = (reference or ZERO_REFERENCE).resolve(image)
    keep = b[seg.labels].astype(bool)
    return image.with_data(np.where(keep[:, :, None], image.data, ref))


def weight_apply(image: Image, seg: Segmentation, sample) -> Image:
    """Pixel p becomes w[label(p)] * image(p); the zero-mean reference
    convention is assumed."""
    w = sample.w if isinstance(sample, WeightSample) else np.asarray(sample, np.float64)
    if not seg.matches(image):
        raise ShapeMismatchError("segmentation does not match the image")
    if w.shape[0] != seg.num_segments:
        raise LengthMismatchError(f"{w.shape[0]} weights for {seg.num_segments} segments")
    return image.with_data(image.data * w[seg.labels][:, :, None])


def segment_average(values, seg: Segmentation) -> ImportanceVector:
    """Spatial mean per segment; channel values at a pixel are summed before
    averaging, matching the aggregation mapping's per-segment denominator."""
    arr = values.values if isinstance(values, ImportanceMap) else np.asarray(values, np.float64)
    if arr.ndim == 3:
        arr = arr.sum(axis=2)
    if arr.shape != (seg.height, seg.width):
        raise ShapeMismatchError(
            f"map shape {arr.shape} != segmentation {(seg.height, seg.width)}"
        )
    sums = np.bincount(seg.labels.ravel(), weights=arr.ravel(), minlength=seg.num_segments)
    return ImportanceVector(sums / seg.counts(), 0.0)


def _batched_forward(model, images: list[Image], sel_index: int, batch_size: int) -> np.ndarray:
    out = np.empty(len(images))
    for at in range(0, len(images), batch_size):
        chunk = images[at:at + batch_size]
        out[at:at + len(chunk)] = model.forward_batch(chunk)[:, sel_index]
    return out


def _popcount(v: np.ndarray) -> np.ndarray:
    v = v.astype(np.uint32)
    v = v - ((v >> np.uint32(1)) & np.uint32(0x55555555))
    v = (v & np.uint32(0x33333333)) + ((v >> np.uint32(2)) & np.uint32(0x33333333))
    v = (v + (v >> np.uint32(4))) & np.uint32(0x0F0F0F0F)
    return ((v * np.uint32(0x01010101)) >> np.uint32(24)).astype(np.int64)


def _mask_values(
    model, image: Image, seg: Segmentation, sel: OutputSelector,
    bit_rows: np.ndarray, reference: Optional[ReferenceInput], batch_size: int,
) -> np.ndarray:
    ref = (reference or ZERO_REFERENCE).resolve(image)
    idx = _models._check_selector(model, sel)
    labels = seg.labels
    imgs = []
    for row in bit_rows:
        keep = row.astype(bool)[labels]
        imgs.append(image.with_data(np.where(keep[:, :, None], image.data, ref)))
    return _batched_forward(model, imgs, idx, batch_size)


def exact_shapley(
    model, image: Image, seg: Segmentation, sel: OutputSelector,
    reference: Optional[ReferenceInput] = None, batch_size: int = 256,
) -> ImportanceVector:
    """Exact Shapley values by enumerating all 2^M coalitions.

    phi_i = sum over S not containing i of |S|!(M-|S|-1)!/M! times the
    masked-output difference f(S u {i}) - f(S); phi0 = f(empty coalition).
    Performs exactly 2^M forward evaluations.
    """
    m = seg.num_segments
    if m > MAX_EXACT_FEATURES:
        raise TooManyFeaturesError(f"{m} segments exceed the 2^{MAX_EXACT_FEATURES} cap")
    n = 1 << m
    arange = np.arange(n, dtype=np.int64)
    bit_rows = ((arange[:, None] >> np.arange(m)) & 1).astype(np.uint8)
    fv = _mask_values(model, image, seg, sel, bit_rows, reference, batch_size)

    fact = [math.factorial(j) for j in range(m + 1)]
    wsize = np.array([fact[j] * fact[m - j - 1] / fact[m] for j in range(m)])

    phi = np.empty(m)
    half = np.arange(n >> 1, dtype=np.int64)
    for i in range(m):
        low = half & ((1 << i) - 1)
        s = ((half >> i) << (i + 1)) | low
        diff = fv[s | (1 << i)] - fv[s]
        phi[i] = float(np.dot(wsize[_popcount(s)], diff))
    return ImportanceVector(phi, float(fv[0]))


def _shapley_kernel_weights(m: int, sizes: np.ndarray) -> np.ndarray:
    comb = np.array([math.comb(m, int(s)) for s in sizes], dtype=np.float64)
    return (m - 1) / (comb * sizes * (m - sizes))


def _solve_weighted(
    design: np.ndarray, y: np.ndarray, weights: np.ndarray,
    ridge: float, penalize: np.ndarray,
) -> np.ndarray:
    sw = np.sqrt(weights)
    aw = design * sw[:, None]
    yw = y * sw
    if ridge > 0.0:
        gram = aw.T @ aw + ridge * np.diag(penalize)
        return np.linalg.solve(gram, aw.T @ yw)
    sol, _, rank, _ = np.linalg.lstsq(aw, yw, rcond=None)
    if rank < design.shape[1]:
        raise SingularSystemError(
            f"rank {rank} < {design.shape[1]} unknowns with ridge_lambda=0"
        )
    return sol


def lime_attribution(
    model, image: Image, seg: Segmentation, sel: OutputSelector,
    params: LimeParams, reference: Optional[ReferenceInput] = None,
    batch_size: int = 256,
) -> ImportanceVector:
    """Weighted ridge regression over masked binary samples.

    Samples K binary vectors uniformly (the first is always all-ones); the
    exponential kernel weighs each by exp(-D^2 / sigma^2) with D the
    fraction of masked-off segments.  With ``enumerate_all`` the sample set
    is all 2^M vectors; with the Shapley kernel the empty/full coalitions
    become constraints and the solve reduces to the Kernel-SHAP estimator.
    """
    m = seg.num_segments
    if params.enumerate_all:
        if m > MAX_EXACT_FEATURES:
            raise TooManyFeaturesError(f"cannot enumerate 2^{m} samples")
        n = 1 << m
        z = ((np.arange(n, dtype=np.int64)[:, None] >> np.arange(m)) & 1).astype(np.uint8)
    else:
        if params.num_samples < m:
            warnings.warn(
                f"K={params.num_samples} < M={m}: system is underdetermined, "
                "ridge regularization carries the fit",
                stacklevel=2,
            )
        stream = SplitMix64(params.seed)
        z = np.empty((params.num_samples, m), dtype=np.uint8)
        z[0] = 1
        if params.num_samples > 1:
            z[1:] = stream.bits((params.num_samples - 1) * m).reshape(-1, m)
    fv = _mask_values(model, image, seg, sel, z, reference, batch_size)
    zf = z.astype(np.float64)

    if params.kernel == "shapley":
        sizes = z.sum(axis=1).astype(np.int64)
        interior = (sizes > 0) & (sizes < m)
        phi0 = float(fv[int(np.flatnonzero(sizes == 0)[0])])
        total = float(fv[int(np.flatnonzero(sizes == m)[0])]) - phi0
        if m == 1:
            return ImportanceVector(np.array([total]), phi0)
        zi = zf[interior]
        wi = _shapley_kernel_weights(m, sizes[interior].astype(np.float64))
        # substitute phi_M = total - sum(phi_free) into the regression
        design = zi[:, :-1] - zi[:, -1:]
        target = fv[interior] - phi0 - zi[:, -1] * total
        free = _solve_weighted(design, target, wi, params.ridge_lambda,
                               np.ones(m - 1))
        phi = np.concatenate([free, [total - free.sum()]])
        return ImportanceVector(phi, phi0)

    frac_off = 1.0 - zf.mean(axis=1)
    pi = np.exp(-(frac_off ** 2) / params.kernel_width ** 2)
    design = np.concatenate([np.ones((zf.shape[0], 1)), zf], axis=1)
    penalize = np.concatenate([[0.0], np.ones(m)])  # intercept unpenalized
    theta = _solve_weighted(design, fv, pi, params.ridge_lambda, penalize)
    return ImportanceVector(theta[1:], float(theta[0]))


def integrated_gradients(
    model, image: Image, sel: OutputSelector, steps: int,
    reference: Optional[ReferenceInput] = None,
) -> ImportanceMap:
    """Discrete path integral: (x - ref)/K times the sum over k=1..K of the
    gradient at ref + k(x - ref)/K.  Costs K forward and K backward passes."""
    if steps < 1:
        raise InvalidValueError("steps must be >= 1")
    ref = (reference or ZERO_REFERENCE).resolve(image)
    delta = image.data - ref
    acc = np.zeros(image.shape)
    for k in range(1, steps + 1):
        point = image.with_data(ref + delta * (k / steps))
        acc += _models.gradient(model, point, sel)
    return ImportanceMap(delta * acc / steps)


def ig_segmented(
    model, image: Image, seg: Segmentation, sel: OutputSelector, steps: int,
    reference: Optional[ReferenceInput] = None,
) -> ImportanceVector:
    """Segment average of the integrated-gradients raster."""
    return segment_average(integrated_gradients(model, image, sel, steps, reference), seg)


def e2x_attribution(
    model, image: Image, seg: Segmentation, sel: OutputSelector,
    params: E2xParams, reference: Optional[ReferenceInput] = None,
) -> ImportanceVector:
    """Gradient-weighted SHAP estimate with sampled per-segment weights.

    For each of K samples, every segment draws a weight uniformly from
    {0, 1/(K-1), ..., 1}; gradients are taken at the weighted image and
    accumulated in sample order, then x * mean-gradient is segment-averaged.
    Requires the zero-mean reference convention; deterministic given seed.
    """
    if reference is not None and not reference.is_zero():
        raise InvalidReferenceError(
            "this estimator assumes the zero (distribution-mean) reference; "
            "shift the input instead of passing a nonzero reference"
        )
    if not seg.matches(image):
        raise ShapeMismatchError("segmentation does not match the image")
    k, m = params.num_samples, seg.num_segments
    stream = SplitMix64(params.seed)
    levels = stream.levels(k * m, k).reshape(k, m)
    acc = np.zeros(image.shape)
    for i in range(k):
        sample = WeightSample.from_levels(levels[i], k)
        acc += _models.gradient(model, weight_apply(image, seg, sample), sel)
    raster = image.data * acc / k
    vec = segment_average(raster, seg)
    return ImportanceVector(vec.phi, 0.0)


def _axis_centers(lo: int, hi: int, stride: int) -> np.ndarray:
    pts = list(range(lo, hi, stride))
    if pts[-1] != hi - 1:
        pts.append(hi - 1)
    return np.asarray(pts, dtype=np.int64)


def _bilinear(centers_r, centers_c, grid, rows, cols) -> np.ndarray:
    def weights(centers, coords):
        if len(centers) == 1:
            return np.zeros(len(coords), np.int64), np.zeros(len(coords))
        i = np.clip(np.searchsorted(centers, coords, side="right") - 1,
                    0, len(centers) - 2)
        t = (coords - centers[i]) / (centers[i + 1] - centers[i])
        return i, t

    ri, rt = weights(centers_r, rows)
    ci, ct = weights(centers_c, cols)
    if len(centers_r) == 1:
        row_lo = row_hi = grid[np.zeros(len(rows), np.int64)]
    else:
        row_lo, row_hi = grid[ri], grid[ri + 1]
    rowv = row_lo * (1.0 - rt)[:, None] + row_hi * rt[:, None]
    if len(centers_c) == 1:
        lo = hi = rowv[:, np.zeros(len(cols), np.int64)]
    else:
        lo, hi = rowv[:, ci], rowv[:, ci + 1]
    return lo * (1.0 - ct)[None, :] + hi * ct[None, :]


def pda_attribution(
    model, image: Image, sel: OutputSelector, params: PdaParams,
    region: Optional[Box] = None, reference: Optional[ReferenceInput] = None,
    base_output: Optional[float] = None, batch_size: int = 256,
) -> ImportanceMap:
    """Occlusion-difference map on a stride grid.

    At each grid position the window is filled (image mean or reference),
    f(x) - f(occluded) is recorded at the window center, and the per-pixel
    map is bilinearly interpolated between grid points.  Windows near the
    border are clamped inside the image.  Costs one forward per grid
    position, plus one for f(x) when ``base_output`` is not supplied.
    """
    h, w = image.height, image.width
    wh, ww = params.window
    if wh > h or ww > w:
        raise WindowTooLargeError(f"window {params.window} exceeds image {h}x{w}")
    if region is None:
        r0, r1, c0, c1 = 0, h, 0, w
    else:
        r0 = max(0, int(np.floor(region.ymin)))
        r1 = min(h, int(np.ceil(region.ymax)))
        c0 = max(0, int(np.floor(region.xmin)))
        c1 = min(w, int(np.ceil(region.xmax)))
        if r0 >= r1 or c0 >= c1:
            raise InvalidValueError("region does not intersect the image")
    idx = _models._check_selector(model, sel)

    if params.fill == "mean":
        fill = image.data.mean(axis=(0, 1))
        fill = np.broadcast_to(fill, image.shape)
    else:
        fill = (reference or ZERO_REFERENCE).resolve(image)

    centers_r = _axis_centers(r0, r1, params.stride)
    centers_c = _axis_centers(c0, c1, params.stride)
    occluded = []
    for cr in centers_r:
        top = int(np.clip(cr - wh // 2, 0, h - wh))
        for cc in centers_c:
            left = int(np.clip(cc - ww // 2, 0, w - ww))
            data = np.array(image.data)
            data[top:top + wh, left:left + ww] = fill[top:top + wh, left:left + ww]
            occluded.append(image.with_data(data))
    if base_output is None:
        base = float(model.forward_batch([image])[0, idx])
    else:
        base = float(base_output)
    vals = base - _batched_forward(model, occluded, idx, batch_size)
    grid = vals.reshape(len(centers_r), len(centers_c))

    out = np.zeros((h, w))
    out[r0:r1, c0:c1] = _bilinear(
        centers_r.astype(np.float64), centers_c.astype(np.float64), grid,
        np.arange(r0, r1, dtype=np.float64), np.arange(c0, c1, dtype=np.float64),
    )
    return ImportanceMap(out)


METHODS = ("shapley", "lime", "ig", "ig_seg", "e2x", "pda")
_DEFAULT_K = {"lime": 2000, "e2x": 128, "ig": 32, "ig_seg": 32}


@dataclass
class AttributionResult:
    """One estimator run, with a common per-pixel view for comparisons."""

    method: str
    vector: Optional[ImportanceVector] = None
    map: Optional[ImportanceMap] = None
    seg: Optional[Segmentation] = None

    @property
    def kind(self) -> str:
        return "vector" if self.vector is not None else "map"

    def per_pixel(self) -> np.ndarray:
        if self.vector is not None:
            if self.seg is None:
                raise InvalidValueError("per-segment result needs its segmentation")
            return self.vector.broadcast(self.seg)
        assert self.map is not None
        return self.map.per_pixel()


def run_attribution(
    model, image: Image, sel: OutputSelector, method: str, *,
    seg: Optional[Segmentation] = None, params: Optional[dict] = None,
    region: Optional[Box] = None, reference: Optional[ReferenceInput] = None,
    base_output: Optional[float] = None,
) -> AttributionResult:
    """Dispatch one named estimator from a flat parameter dict.

    Recognized parameter keys: k (sample/step count), seed, kernel_width,
    ridge_lambda, kernel, enumerate_all, window, stride, fill.
    """
    if method not in METHODS:
        raise InvalidValueError(f"unknown method {method!r}; expected one of {METHODS}")
    p = dict(params or {})
    k = int(p.get("k", _DEFAULT_K.get(method, 0)))
    seed = int(p.get("seed", 0))
    needs_seg = method in ("shapley", "lime", "ig_seg", "e2x")
    if needs_seg and seg is None:
        raise InvalidValueError(f"method {method!r} needs a segmentation")

    if method == "shapley":
        vec = exact_shapley(model, image, seg, sel, reference)
        return AttributionResult(method, vector=vec, seg=seg)
    if method == "lime":
        lp = LimeParams(
            num_samples=k,
            kernel_width=float(p.get("kernel_width", 0.25)),
            ridge_lambda=float(p.get("ridge_lambda", 1e-3)),
            seed=seed,
            kernel=p.get("kernel", "exponential"),
            enumerate_all=bool(p.get("enumerate_all", False)),
        )
        vec = lime_attribution(model, image, seg, sel, lp, reference)
        return AttributionResult(method, vector=vec, seg=seg)
    if method == "ig":
        amap = integrated_gradients(model, image, sel, k, reference)
        return AttributionResult(method, map=amap)
    if method == "ig_seg":
        vec = ig_segmented(model, image, seg, sel, k, reference)
        return AttributionResult(method, vector=vec, seg=seg)
    if method == "e2x":
        vec = e2x_attribution(model, image, seg, sel, E2xParams(k, seed), reference)
        return AttributionResult(method, vector=vec, seg=seg)
    window = p.get("window", (8, 8))
    if isinstance(window, int):
        window = (window, window)
    pp = PdaParams(window=tuple(window), stride=int(p.get("stride", 4)),
                   fill=p.get("fill", "mean"))
    amap = pda_attribution(model, image, sel, pp, region=region,
                           reference=reference, base_output=base_output)
    return AttributionResult(method, map=amap)
