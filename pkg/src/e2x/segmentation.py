"""Superpixel and grid segmentations realizing the image-to-features mapping.

SLIC here is the canonical local k-means: distance
D = sqrt(d_color^2 + (d_xy / S)^2 * m^2) with S = sqrt(HW/M) and m the
compactness, run on the raw channel values of the preprocessed image
(no Lab conversion).  Seeding is a regular grid, so the result is fully
deterministic.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import InvalidValueError, TooManySegmentsError
from .types import Image, Segmentation

_FOUR_CONN = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]])


@dataclass(frozen=True)
class SlicParams:
    num_segments: int
    compactness: float = 10.0
    max_iters: int = 10
    enforce_connectivity: bool = True

    def __post_init__(self):
        if self.num_segments < 1:
            raise InvalidValueError("num_segments must be >= 1")
        if self.compactness <= 0:
            raise InvalidValueError("compactness must be > 0")
        if self.max_iters < 1:
            raise InvalidValueError("max_iters must be >= 1")


def _seed_grid(h: int, w: int, m: int) -> tuple[int, int]:
    """Largest near-square grid with at most m cells, aspect-proportional."""
    rows = max(1, int(round(np.sqrt(m * h / w))))
    rows = min(rows, m, h)
    cols = min(max(1, m // rows), w)
    while rows * cols > m:
        cols -= 1
    return rows, cols


def slic_segment(image: Image, params: SlicParams) -> Segmentation:
    h, w = image.height, image.width
    m = params.num_segments
    if m > h * w:
        raise TooManySegmentsError(f"{m} segments requested for {h * w} pixels")

    data = image.data
    rows, cols = _seed_grid(h, w, m)
    seed_r = ((np.arange(rows) + 0.5) * h / rows)
    seed_c = ((np.arange(cols) + 0.5) * w / cols)
    centers_rc = np.array([(r, c) for r in seed_r for c in seed_c])
    pix_r = np.clip(centers_rc[:, 0].astype(int), 0, h - 1)
    pix_c = np.clip(centers_rc[:, 1].astype(int), 0, w - 1)
    centers_color = data[pix_r, pix_c].astype(np.float64)
    n = len(centers_rc)

    s = np.sqrt(h * w / m)
    ratio2 = (params.compactness / s) ** 2
    # window half-width: 2S is canonical; widen to the seed spacing so every
    # pixel falls inside at least one window even when the grid is sparse
    half = int(np.ceil(2.0 * max(s, h / rows, w / cols)))

    rr = np.arange(h)[:, None]
    cc = np.arange(w)[None, :]
    labels = np.zeros((h, w), dtype=np.int64)

    for _ in range(params.max_iters):
        best = np.full((h, w), np.inf)
        new_labels = np.full((h, w), -1, dtype=np.int64)
        for k in range(n):
            r0 = max(0, int(centers_rc[k, 0]) - half)
            r1 = min(h, int(centers_rc[k, 0]) + half + 1)
            c0 = max(0, int(centers_rc[k, 1]) - half)
            c1 = min(w, int(centers_rc[k, 1]) + half + 1)
            patch = data[r0:r1, c0:c1]
            d_color2 = ((patch - centers_color[k]) ** 2).sum(axis=2)
            d_xy2 = (rr[r0:r1] - centers_rc[k, 0]) ** 2 + (cc[:, c0:c1] - centers_rc[k, 1]) ** 2
            dist = d_color2 + d_xy2 * ratio2
            win = dist < best[r0:r1, c0:c1]
            best[r0:r1, c0:c1][win] = dist[win]
            new_labels[r0:r1, c0:c1][win] = k
        if np.any(new_labels < 0):  # sparse seed fallback, rarely taken
            miss = np.argwhere(new_labels < 0)
            for r, c in miss:
                d = ((data[r, c] - centers_color) ** 2).sum(axis=1) + (
                    (r - centers_rc[:, 0]) ** 2 + (c - centers_rc[:, 1]) ** 2
                ) * ratio2
                new_labels[r, c] = int(np.argmin(d))
        if np.array_equal(new_labels, labels):
            labels = new_labels
            break
        labels = new_labels
        flat = labels.ravel()
        cnt = np.bincount(flat, minlength=n).astype(np.float64)
        keep = cnt > 0
        sum_r = np.bincount(flat, weights=np.broadcast_to(rr, (h, w)).ravel(), minlength=n)
        sum_c = np.bincount(flat, weights=np.broadcast_to(cc, (h, w)).ravel(), minlength=n)
        centers_rc[keep, 0] = sum_r[keep] / cnt[keep]
        centers_rc[keep, 1] = sum_c[keep] / cnt[keep]
        for ch in range(data.shape[2]):
            sc = np.bincount(flat, weights=data[:, :, ch].ravel(), minlength=n)
            centers_color[keep, ch] = sc[keep] / cnt[keep]

    if params.enforce_connectivity:
        labels = _enforce_connectivity(labels, m)
    labels = _compact_labels(labels)
    return Segmentation(labels, int(labels.max()) + 1)


def _neighbor_label_counts(labels: np.ndarray, mask: np.ndarray) -> dict[int, int]:
    """Total segment size per label 4-adjacent to ``mask`` (own label excluded)."""
    ring = ndimage.binary_dilation(mask, structure=_FOUR_CONN) & ~mask
    own = labels[mask][0]
    sizes = np.bincount(labels.ravel())
    out: dict[int, int] = {}
    for lab in np.unique(labels[ring]):
        if lab != own:
            out[int(lab)] = int(sizes[lab])
    return out


def _merge_target(labels: np.ndarray, mask: np.ndarray) -> int | None:
    counts = _neighbor_label_counts(labels, mask)
    if not counts:
        return None
    # largest neighbor segment wins; ties go to the smallest label id
    return min(counts, key=lambda lab: (-counts[lab], lab))


def _enforce_connectivity(labels: np.ndarray, m_requested: int) -> np.ndarray:
    labels = labels.copy()
    h, w = labels.shape

    # relabel every non-largest connected component of each label
    orphans = []
    for lab in np.unique(labels):
        comp, ncomp = ndimage.label(labels == lab, structure=_FOUR_CONN)
        if ncomp <= 1:
            continue
        sizes = np.bincount(comp.ravel())[1:]
        keep = int(np.argmax(sizes)) + 1
        for ci in range(1, ncomp + 1):
            if ci != keep:
                mask = comp == ci
                first = int(np.flatnonzero(mask.ravel())[0])
                orphans.append((first, mask))
    for _, mask in sorted(orphans, key=lambda t: t[0]):
        target = _merge_target(labels, mask)
        if target is not None:
            labels[mask] = target

    # absorb segments below the minimum size into their largest neighbor
    min_size = (h * w / m_requested) / 4.0
    while True:
        sizes = np.bincount(labels.ravel())
        present = np.flatnonzero(sizes)
        small = [lab for lab in present if sizes[lab] < min_size]
        if not small or len(present) <= 1:
            break
        lab = min(small, key=lambda v: (sizes[v], v))
        target = _merge_target(labels, labels == lab)
        if target is None:
            break
        labels[labels == lab] = target
    return labels


def _compact_labels(labels: np.ndarray) -> np.ndarray:
    """Renumber labels by first appearance in raster order."""
    flat = labels.ravel()
    _, first = np.unique(flat, return_index=True)
    order = flat[np.sort(first)]
    remap = np.empty(int(flat.max()) + 1, dtype=np.int64)
    remap[order] = np.arange(len(order))
    return remap[labels]


def grid_segment(image: Image, rows: int, cols: int) -> Segmentation:
    """rows x cols rectangular tiles; remainder pixels join the last
    row/column of tiles."""
    h, w = image.height, image.width
    if rows < 1 or cols < 1:
        raise InvalidValueError("rows and cols must be >= 1")
    if rows > h or cols > w or rows * cols > h * w:
        raise TooManySegmentsError(f"{rows}x{cols} grid does not fit a {h}x{w} image")
    band_r = np.minimum(np.arange(h) // (h // rows), rows - 1)
    band_c = np.minimum(np.arange(w) // (w // cols), cols - 1)
    labels = band_r[:, None] * cols + band_c[None, :]
    return Segmentation(labels, rows * cols)


@dataclass(frozen=True)
class SegmentStats:
    counts: np.ndarray          # pixels per segment
    bounds: np.ndarray          # per segment (min_row, min_col, max_row, max_col)


def segment_stats(seg: Segmentation) -> SegmentStats:
    m = seg.num_segments
    counts = seg.counts()
    bounds = np.empty((m, 4), dtype=np.int64)
    rr = np.arange(seg.height)[:, None]
    cc = np.arange(seg.width)[None, :]
    for i in range(m):
        mask = seg.labels == i
        bounds[i] = (rr[mask.any(axis=1)].min(), cc[:, mask.any(axis=0)].min(),
                     rr[mask.any(axis=1)].max(), cc[:, mask.any(axis=0)].max())
    return SegmentStats(counts=counts, bounds=bounds)


def write_segmentation_csv(seg: Segmentation, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row", "col", "label"])
        for r in range(seg.height):
            for c in range(seg.width):
                writer.writerow([r, c, int(seg.labels[r, c])])


def read_segmentation_csv(path) -> Segmentation:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["row", "col", "label"]:
            raise InvalidValueError(f"unexpected segmentation header {header}")
        for rec in reader:
            rows.append((int(rec[0]), int(rec[1]), int(rec[2])))
    h = max(r for r, _, _ in rows) + 1
    w = max(c for _, c, _ in rows) + 1
    labels = np.full((h, w), -1, dtype=np.int64)
    for r, c, lab in rows:
        labels[r, c] = lab
    if labels.min() < 0:
        raise InvalidValueError("segmentation CSV does not cover every pixel")
    return Segmentation(labels, int(labels.max()) + 1)


def label_colors(m: int) -> np.ndarray:
    """Deterministic distinct RGB color per label (golden-angle hues)."""
    import colorsys

    out = np.empty((m, 3), dtype=np.uint8)
    for i in range(m):
        hue = (i * 0.6180339887498949) % 1.0
        r, g, b = colorsys.hsv_to_rgb(hue, 0.85, 0.95)
        out[i] = (round(r * 255), round(g * 255), round(b * 255))
    return out


def write_segmentation_png(seg: Segmentation, path) -> None:
    from PIL import Image as PILImage

    colors = label_colors(seg.num_segments)
    PILImage.fromarray(colors[seg.labels], mode="RGB").save(path, format="PNG")
