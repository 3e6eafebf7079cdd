"""Black-box prediction-model contract plus reference models with verified
gradients, so every estimator runs without an external ML framework.

Models are immutable after construction; ``forward_batch`` and ``gradient``
are safe to call from many workers.  Batch evaluation loops per image so the
result is bitwise-equal to per-image calls.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Protocol, Sequence, runtime_checkable

import numpy as np

from .errors import (
    GradientUnavailableError,
    InvalidValueError,
    ShapeMismatchError,
)
from .types import Box, Detection, Image

FIXTURE_MAGIC = b"E2XM"
FIXTURE_VERSION = 1
DEFAULT_SEED = 0


@dataclass(frozen=True)
class OutputSelector:
    """Which scalar output to explain."""

    index: int

    def __post_init__(self):
        if self.index < 0:
            raise InvalidValueError("output index must be non-negative")


@runtime_checkable
class PredictionModel(Protocol):
    output_dim: int

    def forward_batch(self, images: Sequence[Image]) -> np.ndarray: ...


def _check_selector(model, sel: OutputSelector) -> int:
    if sel.index >= model.output_dim:
        raise InvalidValueError(
            f"output index {sel.index} out of range for output_dim {model.output_dim}"
        )
    return sel.index


def forward_batch(model, images: Sequence[Image]) -> np.ndarray:
    """Evaluate a batch, validating that all images share one shape."""
    if len(images) == 0:
        return np.zeros((0, model.output_dim))
    shape = images[0].shape
    for img in images:
        if img.shape != shape:
            raise ShapeMismatchError("batch images must share one shape")
    return model.forward_batch(images)


def gradient(model, image: Image, sel: OutputSelector) -> np.ndarray:
    """d(output[sel]) / d(input), shaped like the image.

    Raises GradientUnavailableError for forward-only models, which signals
    that only perturbation methods apply.
    """
    fn = getattr(model, "gradient", None)
    if fn is None:
        raise GradientUnavailableError(f"{type(model).__name__} exposes no gradients")
    return fn(image, sel)


def check_gradient(
    model, image: Image, sel: OutputSelector, eps: float = 1e-3,
    max_coords: int = 256, seed: int = 0,
) -> float:
    """Max relative error between analytic and central-difference gradients
    over a sampled subset of input coordinates (at most ``max_coords``)."""
    if eps <= 0:
        raise InvalidValueError("eps must be positive")
    g = gradient(model, image, sel)
    n = image.data.size
    rng = np.random.default_rng(seed)
    coords = np.arange(n) if n <= max_coords else np.sort(
        rng.choice(n, size=max_coords, replace=False)
    )
    flat = image.data.ravel()
    worst = 0.0
    for c in coords:
        plus, minus = flat.copy(), flat.copy()
        plus[c] += eps
        minus[c] -= eps
        fp = model.forward_batch([image.with_data(plus.reshape(image.shape))])[0, sel.index]
        fm = model.forward_batch([image.with_data(minus.reshape(image.shape))])[0, sel.index]
        numeric = (fp - fm) / (2.0 * eps)
        err = abs(g.ravel()[c] - numeric) / (abs(numeric) + 1e-12)
        worst = max(worst, float(err))
    return worst


def _f32(arr: np.ndarray) -> np.ndarray:
    # params are quantized to f32 at construction so fixture round-trips
    # are exact
    return arr.astype(np.float32).astype(np.float64)


class LinearModel:
    """f(x) = <w, x> + b with one scalar output; analytic test fixture."""

    output_dim = 1

    def __init__(self, weights: np.ndarray, bias: float = 0.0):
        w = np.asarray(weights, np.float64)
        if w.ndim == 2:
            w = w[:, :, None]
        if w.ndim != 3:
            raise ShapeMismatchError("weights must be HxWxC")
        self.weights = _f32(w)
        self.bias = float(np.float32(bias))
        self.input_shape = self.weights.shape

    def _check(self, image: Image):
        if image.shape != self.input_shape:
            raise ShapeMismatchError(
                f"image shape {image.shape} != weight shape {self.input_shape}"
            )

    def forward_batch(self, images: Sequence[Image]) -> np.ndarray:
        out = np.empty((len(images), 1))
        for i, img in enumerate(images):
            self._check(img)
            out[i, 0] = float(np.dot(img.data.ravel(), self.weights.ravel()) + self.bias)
        return out

    def gradient(self, image: Image, sel: OutputSelector) -> np.ndarray:
        self._check(image)
        _check_selector(self, sel)
        return np.array(self.weights)

    def parameters(self) -> list[np.ndarray]:
        return [self.weights, np.array([self.bias])]

    def set_parameters(self, params: Sequence[np.ndarray]) -> None:
        self.weights = _f32(params[0].reshape(self.weights.shape))
        self.bias = float(np.float32(params[1][0]))


def _conv_same(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """3x3 same-padding convolution via im2col; x (H,W,C) -> (H,W,F)."""
    h, wd, c = x.shape
    kh, kw, _, f = w.shape
    ph, pw = kh // 2, kw // 2
    xp = np.zeros((h + 2 * ph, wd + 2 * pw, c))
    xp[ph:ph + h, pw:pw + wd] = x
    cols = np.empty((h * wd, kh * kw * c))
    k = 0
    for dy in range(kh):
        for dx in range(kw):
            cols[:, k * c:(k + 1) * c] = xp[dy:dy + h, dx:dx + wd].reshape(h * wd, c)
            k += 1
    return (cols @ w.reshape(-1, f) + b).reshape(h, wd, f)


def _conv_same_backward(gout: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Gradient of _conv_same w.r.t. x given d/d(out)."""
    h, wd, f = gout.shape
    kh, kw, c, _ = w.shape
    ph, pw = kh // 2, kw // 2
    gcols = gout.reshape(h * wd, f) @ w.reshape(-1, f).T
    gxp = np.zeros((h + 2 * ph, wd + 2 * pw, c))
    k = 0
    for dy in range(kh):
        for dx in range(kw):
            gxp[dy:dy + h, dx:dx + wd] += gcols[:, k * c:(k + 1) * c].reshape(h, wd, c)
            k += 1
    return gxp[ph:ph + h, pw:pw + wd]


def _avgpool2(x: np.ndarray) -> np.ndarray:
    """2x2 stride-2 average pooling; odd trailing row/col is dropped."""
    h, w, f = x.shape
    ho, wo = h // 2, w // 2
    v = x[:ho * 2, :wo * 2].reshape(ho, 2, wo, 2, f)
    return v.mean(axis=(1, 3))


def _avgpool2_backward(gout: np.ndarray, shape: tuple[int, int, int]) -> np.ndarray:
    h, w, f = shape
    ho, wo = h // 2, w // 2
    gx = np.zeros(shape)
    spread = np.repeat(np.repeat(gout / 4.0, 2, axis=0), 2, axis=1)
    gx[:ho * 2, :wo * 2] = spread
    return gx


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


class TinyCNN:
    """Conv(3x3, ReLU) -> avg-pool(2x2) -> dense -> softmax.

    Desk-scale stand-in for a real DNN: forward and manual backward are
    defined for every layer, ReLU is the only nonlinearity, and the ReLU
    subgradient at exactly 0 is taken as 0.  Parameters are seeded and
    f32-quantized so fixtures reproduce bit-for-bit.
    """

    def __init__(
        self, input_shape: tuple[int, int, int] = (16, 16, 1),
        num_classes: int = 3, num_filters: int = 4, seed: int = DEFAULT_SEED,
    ):
        h, w, c = input_shape
        if h < 2 or w < 2:
            raise InvalidValueError("input must be at least 2x2")
        if num_classes < 2:
            raise InvalidValueError("softmax needs at least 2 classes")
        self.input_shape = (h, w, c)
        self.num_classes = num_classes
        self.num_filters = num_filters
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.conv_w = _f32(rng.normal(0.0, 0.1, size=(3, 3, c, num_filters)))
        self.conv_b = _f32(rng.normal(0.0, 0.05, size=num_filters))
        flat = (h // 2) * (w // 2) * num_filters
        self.dense_w = _f32(rng.normal(0.0, 0.5 / np.sqrt(flat), size=(flat, num_classes)))
        self.dense_b = _f32(rng.normal(0.0, 0.05, size=num_classes))

    @property
    def output_dim(self) -> int:
        return self.num_classes

    def _check(self, image: Image):
        if image.shape != self.input_shape:
            raise ShapeMismatchError(
                f"image shape {image.shape} != model input {self.input_shape}"
            )

    def conv_preactivations(self, image: Image) -> np.ndarray:
        """Pre-ReLU conv responses; exposed for kink-avoidance checks."""
        self._check(image)
        return _conv_same(image.data, self.conv_w, self.conv_b)

    def _forward(self, x: np.ndarray):
        pre = _conv_same(x, self.conv_w, self.conv_b)
        act = np.maximum(pre, 0.0)
        pooled = _avgpool2(act)
        logits = pooled.ravel() @ self.dense_w + self.dense_b
        return pre, act, pooled, _softmax(logits)

    def forward_batch(self, images: Sequence[Image]) -> np.ndarray:
        out = np.empty((len(images), self.num_classes))
        for i, img in enumerate(images):
            self._check(img)
            out[i] = self._forward(img.data)[3]
        return out

    def gradient(self, image: Image, sel: OutputSelector) -> np.ndarray:
        self._check(image)
        idx = _check_selector(self, sel)
        pre, act, pooled, probs = self._forward(image.data)
        dlogits = -probs[idx] * probs
        dlogits[idx] += probs[idx]
        dpooled = (self.dense_w @ dlogits).reshape(pooled.shape)
        dact = _avgpool2_backward(dpooled, act.shape)
        dpre = dact * (pre > 0.0)
        return _conv_same_backward(dpre, self.conv_w)

    def parameters(self) -> list[np.ndarray]:
        return [self.conv_w, self.conv_b, self.dense_w, self.dense_b]

    def set_parameters(self, params: Sequence[np.ndarray]) -> None:
        self.conv_w = _f32(params[0].reshape(self.conv_w.shape))
        self.conv_b = _f32(params[1].reshape(self.conv_b.shape))
        self.dense_w = _f32(params[2].reshape(self.dense_w.shape))
        self.dense_b = _f32(params[3].reshape(self.dense_b.shape))


class ToyDetector:
    """Anchor-grid detector on TinyCNN-style features.

    Emits ``num_detections`` anchor boxes; each anchor region-pools the conv
    features and runs a shared dense head to per-class softmax confidences.
    The output vector concatenates them anchor-major, so detection (d, c)
    has the stable output index ``d * num_classes + c``.  Class 0 is
    background and never emitted as a candidate.
    """

    def __init__(
        self, input_shape: tuple[int, int, int] = (32, 32, 3),
        num_classes: int = 4, num_detections: int = 64,
        num_filters: int = 8, seed: int = DEFAULT_SEED,
    ):
        h, w, c = input_shape
        if num_classes < 2:
            raise InvalidValueError("need background plus at least one class")
        n = int(np.ceil(np.sqrt(num_detections)))
        if n > min(h, w) // 2:
            raise InvalidValueError(
                f"{num_detections} anchors do not fit a {h}x{w} image"
            )
        self.input_shape = (h, w, c)
        self.num_classes = num_classes
        self.num_detections = num_detections
        self.num_filters = num_filters
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.conv_w = _f32(rng.normal(0.0, 0.1, size=(3, 3, c, num_filters)))
        self.conv_b = _f32(rng.normal(0.0, 0.05, size=num_filters))
        self.head_w = _f32(rng.normal(0.0, 0.8 / np.sqrt(num_filters),
                                      size=(num_filters, num_classes)))
        self.head_b = _f32(rng.normal(0.0, 0.05, size=num_classes))
        self.anchors = self._build_anchors(n)[:num_detections]
        self._regions = [self._feature_region(b) for b in self.anchors]

    def _build_anchors(self, n: int) -> list[Box]:
        h, w, _ = self.input_shape
        boxes = []
        for i in range(n):
            cy = (i + 0.5) * h / n
            for j in range(n):
                cx = (j + 0.5) * w / n
                boxes.append(Box(
                    max(0.0, cx - w / n), max(0.0, cy - h / n),
                    min(float(w), cx + w / n), min(float(h), cy + h / n),
                ))
        return boxes

    def _feature_region(self, box: Box) -> tuple[int, int, int, int]:
        # anchor box mapped onto the pooled (H//2, W//2) feature grid
        gh, gw = self.input_shape[0] // 2, self.input_shape[1] // 2
        r0 = min(gh - 1, int(box.ymin // 2))
        c0 = min(gw - 1, int(box.xmin // 2))
        r1 = max(r0 + 1, min(gh, int(np.ceil(box.ymax / 2))))
        c1 = max(c0 + 1, min(gw, int(np.ceil(box.xmax / 2))))
        return r0, r1, c0, c1

    @property
    def output_dim(self) -> int:
        return self.num_detections * self.num_classes

    def _check(self, image: Image):
        if image.shape != self.input_shape:
            raise ShapeMismatchError(
                f"image shape {image.shape} != model input {self.input_shape}"
            )

    def _forward(self, x: np.ndarray):
        pre = _conv_same(x, self.conv_w, self.conv_b)
        act = np.maximum(pre, 0.0)
        pooled = _avgpool2(act)
        probs = np.empty((self.num_detections, self.num_classes))
        for d, (r0, r1, c0, c1) in enumerate(self._regions):
            feat = pooled[r0:r1, c0:c1].mean(axis=(0, 1))
            probs[d] = _softmax(feat @ self.head_w + self.head_b)
        return pre, act, pooled, probs

    def forward_batch(self, images: Sequence[Image]) -> np.ndarray:
        out = np.empty((len(images), self.output_dim))
        for i, img in enumerate(images):
            self._check(img)
            out[i] = self._forward(img.data)[3].ravel()
        return out

    def gradient(self, image: Image, sel: OutputSelector) -> np.ndarray:
        self._check(image)
        idx = _check_selector(self, sel)
        d, cls = divmod(idx, self.num_classes)
        pre, act, pooled, probs = self._forward(image.data)
        p = probs[d]
        dlogits = -p[cls] * p
        dlogits[cls] += p[cls]
        dfeat = self.head_w @ dlogits
        dpooled = np.zeros_like(pooled)
        r0, r1, c0, c1 = self._regions[d]
        dpooled[r0:r1, c0:c1] = dfeat / ((r1 - r0) * (c1 - c0))
        dact = _avgpool2_backward(dpooled, act.shape)
        dpre = dact * (pre > 0.0)
        return _conv_same_backward(dpre, self.conv_w)

    def candidate_detections(
        self, image: Image, min_confidence: float = 0.0
    ) -> list[Detection]:
        """All (anchor, foreground class) pairs at or above min_confidence,
        anchor-major then class-minor."""
        self._check(image)
        probs = self._forward(image.data)[3]
        dets = []
        for d in range(self.num_detections):
            for c in range(1, self.num_classes):
                conf = float(probs[d, c])
                if conf >= min_confidence:
                    dets.append(Detection(
                        box=self.anchors[d], class_id=c, confidence=conf,
                        output_index=d * self.num_classes + c,
                    ))
        return dets

    def parameters(self) -> list[np.ndarray]:
        return [self.conv_w, self.conv_b, self.head_w, self.head_b]

    def set_parameters(self, params: Sequence[np.ndarray]) -> None:
        self.conv_w = _f32(params[0].reshape(self.conv_w.shape))
        self.conv_b = _f32(params[1].reshape(self.conv_b.shape))
        self.head_w = _f32(params[2].reshape(self.head_w.shape))
        self.head_b = _f32(params[3].reshape(self.head_b.shape))


class CountingModel:
    """Wrapper counting per-image forward and backward evaluations.

    One ``gradient`` call costs one forward plus one backward; a batch
    forward costs one per image.
    """

    def __init__(self, model):
        self.model = model
        self.forward_count = 0
        self.backward_count = 0

    @property
    def output_dim(self) -> int:
        return self.model.output_dim

    @property
    def input_shape(self):
        return getattr(self.model, "input_shape", None)

    def forward_batch(self, images: Sequence[Image]) -> np.ndarray:
        self.forward_count += len(images)
        return self.model.forward_batch(images)

    def gradient(self, image: Image, sel: OutputSelector) -> np.ndarray:
        fn = getattr(self.model, "gradient", None)
        if fn is None:
            raise GradientUnavailableError(
                f"{type(self.model).__name__} exposes no gradients"
            )
        self.forward_count += 1
        self.backward_count += 1
        return fn(image, sel)

    def reset(self) -> None:
        self.forward_count = 0
        self.backward_count = 0


def save_params(model, path) -> None:
    """Write parameters as magic "E2XM", version u32 LE, then an f32 LE blob."""
    blob = np.concatenate([p.ravel() for p in model.parameters()]).astype("<f4")
    with open(path, "wb") as fh:
        fh.write(FIXTURE_MAGIC)
        fh.write(struct.pack("<I", FIXTURE_VERSION))
        fh.write(blob.tobytes())


def load_params(model, path) -> None:
    """Load a parameter blob saved by save_params into ``model`` in place."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != FIXTURE_MAGIC:
            raise InvalidValueError(f"bad fixture magic {magic!r}")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != FIXTURE_VERSION:
            raise InvalidValueError(f"unsupported fixture version {version}")
        blob = np.frombuffer(fh.read(), dtype="<f4").astype(np.float64)
    shapes = [p.shape for p in model.parameters()]
    total = sum(int(np.prod(s)) for s in shapes)
    if blob.size != total:
        raise ShapeMismatchError(
            f"fixture holds {blob.size} parameters, model expects {total}"
        )
    parts, at = [], 0
    for s in shapes:
        n = int(np.prod(s))
        parts.append(blob[at:at + n].reshape(s))
        at += n
    model.set_parameters(parts)
