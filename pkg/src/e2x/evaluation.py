"""Correlation-vs-cost harness.

A reference estimator is run per detection, every candidate is correlated
against it in per-pixel space (per-segment vectors broadcast over the
segmentation first, so vector and map methods are commensurable), and the
instrumented forward/backward counts are the primary cross-platform cost
metric; wall time is informational.
"""

from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .detection import explain_detection
from .errors import LengthMismatchError, NoDetectionsError
from .models import CountingModel
from .types import Detection, Image, Segmentation


def pearson(a, b) -> Optional[float]:
    """Pearson correlation; None when either vector has zero variance."""
    a = np.asarray(a, np.float64).ravel()
    b = np.asarray(b, np.float64).ravel()
    if a.size != b.size:
        raise LengthMismatchError(f"length {a.size} vs {b.size}")
    if a.size < 2:
        raise LengthMismatchError("correlation needs at least 2 entries")
    da = a - a.mean()
    db = b - b.mean()
    va = float(da @ da)
    vb = float(db @ db)
    if va == 0.0 or vb == 0.0:
        return None
    return float((da @ db) / math.sqrt(va * vb))


@dataclass(frozen=True)
class MethodSpec:
    """A named (method, params) candidate."""

    name: str
    method: str
    params: dict = field(default_factory=dict)

    @classmethod
    def parse(cls, text: str) -> "MethodSpec":
        """Parse 'e2x:k=128,seed=3' style specs."""
        head, _, tail = text.partition(":")
        params: dict = {}
        if tail:
            for item in tail.split(","):
                key, _, val = item.partition("=")
                try:
                    params[key.strip()] = json.loads(val)
                except json.JSONDecodeError:
                    params[key.strip()] = val.strip()
        return cls(name=text, method=head.strip(), params=params)


@dataclass(frozen=True)
class EvalCase:
    """One detection to explain: image, shared segmentation, target."""

    detection_id: str
    image: Image
    seg: Segmentation
    detection: Detection


@dataclass
class EvalRow:
    candidate: str
    detection_id: str
    rho: Optional[float]
    forwards: int
    backwards: int
    ms: float


@dataclass
class EvalResult:
    rows: list[EvalRow] = field(default_factory=list)
    mean_rho: dict[str, Optional[float]] = field(default_factory=dict)
    undefined: dict[str, int] = field(default_factory=dict)
    throughput: dict[str, float] = field(default_factory=dict)

    def summary(self) -> dict:
        return {
            "candidates": {
                name: {
                    "mean_rho": self.mean_rho.get(name),
                    "undefined": self.undefined.get(name, 0),
                    "detections_per_second": self.throughput.get(name),
                }
                for name in sorted({r.candidate for r in self.rows})
            }
        }


def _run_case(model, case: EvalCase, spec: MethodSpec):
    counter = CountingModel(model)
    t0 = time.perf_counter()
    result = explain_detection(
        counter, case.image, case.detection, spec.method,
        seg=case.seg, params=spec.params,
    )
    ms = (time.perf_counter() - t0) * 1000.0
    return result.per_pixel(), counter.forward_count, counter.backward_count, ms


def compare_to_reference(
    model, cases: Sequence[EvalCase], reference: MethodSpec,
    candidates: Sequence[MethodSpec], workers: int = 1,
) -> EvalResult:
    """Pearson correlation of every candidate against the reference, per
    detection, in per-pixel space.

    Undefined correlations (zero-variance maps) are skipped and counted, not
    imputed.  The mean is unweighted over the defined detections.
    """
    if len(cases) == 0:
        raise NoDetectionsError("no detections to evaluate")
    if len(candidates) == 0:
        raise NoDetectionsError("no candidate methods to evaluate")

    ref_pixels = {}
    for case in cases:
        ref_pixels[case.detection_id] = _run_case(model, case, reference)[0]

    jobs = [(spec, case) for spec in candidates for case in cases]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outputs = list(pool.map(lambda j: _run_case(model, j[1], j[0]), jobs))
    else:
        outputs = [_run_case(model, case, spec) for spec, case in jobs]

    result = EvalResult()
    for (spec, case), (pixels, fwd, bwd, ms) in zip(jobs, outputs):
        rho = pearson(ref_pixels[case.detection_id], pixels)
        result.rows.append(EvalRow(spec.name, case.detection_id, rho, fwd, bwd, ms))
    for spec in candidates:
        rhos = [r.rho for r in result.rows if r.candidate == spec.name and r.rho is not None]
        skipped = sum(1 for r in result.rows if r.candidate == spec.name and r.rho is None)
        result.mean_rho[spec.name] = float(np.mean(rhos)) if rhos else None
        result.undefined[spec.name] = skipped
    return result


def benchmark_speed(
    model, cases: Sequence[EvalCase], candidates: Sequence[MethodSpec],
) -> EvalResult:
    """Throughput and evaluation counts per candidate.

    The first case is run once untimed per candidate as warm-up; counts are
    the primary metric, wall time depends on the host.
    """
    if len(cases) == 0:
        raise NoDetectionsError("no detections to evaluate")
    result = EvalResult()
    for spec in candidates:
        _run_case(model, cases[0], spec)  # warm-up, excluded
        total_ms = 0.0
        for case in cases:
            _, fwd, bwd, ms = _run_case(model, case, spec)
            total_ms += ms
            result.rows.append(EvalRow(spec.name, case.detection_id, None, fwd, bwd, ms))
        result.throughput[spec.name] = len(cases) / (total_ms / 1000.0) if total_ms else 0.0
    return result


def write_eval_csv(result: EvalResult, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["candidate", "detection_id", "rho", "forwards", "backwards", "ms"])
        for r in result.rows:
            rho = "" if r.rho is None else f"{r.rho:.9g}"
            writer.writerow([r.candidate, r.detection_id, rho,
                             r.forwards, r.backwards, f"{r.ms:.9g}"])


def write_eval_summary(result: EvalResult, path) -> None:
    with open(path, "w") as fh:
        json.dump(result.summary(), fh, indent=2, sort_keys=True)
        fh.write("\n")
