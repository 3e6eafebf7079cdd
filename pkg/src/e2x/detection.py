"""Maps detector outputs to explanation targets and mines failures.

False positives fall out of greedy IoU matching against groundtruth; false
negatives are recovered by dropping the confidence threshold (default 1%)
and picking, per missed object, the candidate with the highest overlap.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .attribution import AttributionResult, run_attribution
from .errors import InvalidValueError
from .models import OutputSelector
from .types import Box, Detection, GroundTruth, Image, Segmentation

PDA_REGION_AREA_FACTOR = 4.0


def iou(a: Box, b: Box) -> float:
    """Jaccard overlap of two boxes; 0 when disjoint."""
    ix = min(a.xmax, b.xmax) - max(a.xmin, b.xmin)
    iy = min(a.ymax, b.ymax) - max(a.ymin, b.ymin)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    return inter / (a.area() + b.area() - inter)


@dataclass
class MatchResult:
    tp: list[Detection] = field(default_factory=list)
    fp: list[Detection] = field(default_factory=list)
    unmatched_gts: list[GroundTruth] = field(default_factory=list)
    matches: list[tuple[Detection, GroundTruth]] = field(default_factory=list)


def classify_detections(
    dets: Sequence[Detection], gts: Sequence[GroundTruth],
    conf_thr: float = 0.5, iou_thr: float = 0.5,
) -> MatchResult:
    """Greedy matching in descending confidence.

    A detection at or above conf_thr is TP when some still-unmatched
    same-class groundtruth overlaps it with IoU >= iou_thr (it takes the
    highest-IoU one), otherwise FP.  Groundtruths never matched come back
    as the false-negative objects.
    """
    if not 0.0 < conf_thr < 1.0 or not 0.0 < iou_thr < 1.0:
        raise InvalidValueError("thresholds must lie in (0, 1)")
    result = MatchResult()
    taken = [False] * len(gts)
    order = sorted(
        (d for d in dets if d.confidence >= conf_thr),
        key=lambda d: (-d.confidence, d.output_index),
    )
    for det in order:
        best_iou, best_j = 0.0, -1
        for j, gt in enumerate(gts):
            if taken[j] or gt.class_id != det.class_id:
                continue
            ov = iou(det.box, gt.box)
            if ov > best_iou:
                best_iou, best_j = ov, j
        if best_j >= 0 and best_iou >= iou_thr:
            taken[best_j] = True
            result.tp.append(det)
            result.matches.append((det, gts[best_j]))
        else:
            result.fp.append(det)
    result.unmatched_gts = [gt for j, gt in enumerate(gts) if not taken[j]]
    return result


@dataclass
class FnCandidates:
    pairs: list[tuple[GroundTruth, Detection]] = field(default_factory=list)
    unexplainable: list[GroundTruth] = field(default_factory=list)


def find_fn_candidates(
    all_dets: Sequence[Detection], unmatched_gts: Sequence[GroundTruth],
    low_thr: float = 0.01, min_iou: float = 0.1,
) -> FnCandidates:
    """Low-threshold recovery of missed objects.

    For each unmatched groundtruth, among same-class detections with
    confidence >= low_thr and IoU >= min_iou, picks the one maximizing IoU;
    ties go to higher confidence, then lowest output index, which makes the
    selection invariant to the input ordering.  Groundtruths with an empty
    pool are reported as unexplainable.
    """
    out = FnCandidates()
    for gt in unmatched_gts:
        best = None
        best_key = None
        for det in all_dets:
            if det.class_id != gt.class_id or det.confidence < low_thr:
                continue
            ov = iou(det.box, gt.box)
            if ov < min_iou:
                continue
            key = (ov, det.confidence, -det.output_index)
            if best_key is None or key > best_key:
                best, best_key = det, key
        if best is None:
            out.unexplainable.append(gt)
        else:
            out.pairs.append((gt, best))
    return out


def explain_detection(
    model, image: Image, det: Detection, method: str, *,
    seg: Optional[Segmentation] = None, params: Optional[dict] = None,
) -> AttributionResult:
    """Explain one detection's confidence scalar with the chosen estimator.

    The occlusion method analyzes the adaptive region of 4x the detection
    box area and reuses the detection's confidence as the unoccluded output.
    """
    if det.output_index >= model.output_dim:
        raise InvalidValueError(
            f"detection output index {det.output_index} outside model outputs"
        )
    sel = OutputSelector(det.output_index)
    region = None
    base = None
    if method == "pda":
        region = det.box.expand(PDA_REGION_AREA_FACTOR, (image.height, image.width))
        base = det.confidence
    return run_attribution(
        model, image, sel, method, seg=seg, params=params,
        region=region, base_output=base,
    )


def _parse_box(rec: Sequence[str]) -> Box:
    return Box(float(rec[0]), float(rec[1]), float(rec[2]), float(rec[3]))


def read_detections_csv(path) -> dict[str, list[Detection]]:
    """CSV rows image_id,class_id,conf,xmin,ymin,xmax,ymax (header optional).

    Output indices are assigned by row order per image, so a file round-trips
    into deterministic Detection lists even without a live model.
    """
    out: dict[str, list[Detection]] = {}
    with open(path, newline="") as fh:
        for rec in csv.reader(fh):
            if not rec or rec[0].strip() == "image_id":
                continue
            image_id = rec[0].strip()
            dets = out.setdefault(image_id, [])
            dets.append(Detection(
                box=_parse_box(rec[3:7]), class_id=int(rec[1]),
                confidence=float(rec[2]), output_index=len(dets),
            ))
    return out


def write_detections_csv(dets_by_image: dict[str, Sequence[Detection]], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image_id", "class_id", "conf", "xmin", "ymin", "xmax", "ymax"])
        for image_id in sorted(dets_by_image):
            for d in dets_by_image[image_id]:
                writer.writerow([
                    image_id, d.class_id, f"{d.confidence:.9g}",
                    f"{d.box.xmin:.9g}", f"{d.box.ymin:.9g}",
                    f"{d.box.xmax:.9g}", f"{d.box.ymax:.9g}",
                ])


def read_groundtruth_csv(path) -> dict[str, list[GroundTruth]]:
    """CSV rows image_id,class_id,xmin,ymin,xmax,ymax (no confidence column)."""
    out: dict[str, list[GroundTruth]] = {}
    with open(path, newline="") as fh:
        for rec in csv.reader(fh):
            if not rec or rec[0].strip() == "image_id":
                continue
            out.setdefault(rec[0].strip(), []).append(
                GroundTruth(box=_parse_box(rec[2:6]), class_id=int(rec[1]))
            )
    return out


def write_groundtruth_csv(gts_by_image: dict[str, Sequence[GroundTruth]], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image_id", "class_id", "xmin", "ymin", "xmax", "ymax"])
        for image_id in sorted(gts_by_image):
            for g in gts_by_image[image_id]:
                writer.writerow([
                    image_id, g.class_id, f"{g.box.xmin:.9g}", f"{g.box.ymin:.9g}",
                    f"{g.box.xmax:.9g}", f"{g.box.ymax:.9g}",
                ])
