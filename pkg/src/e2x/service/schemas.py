"""Request/response models for the service endpoints.

The same documents double as the CLI's JSON run configs; every request is
schema-validated before any compute starts.
"""

from __future__ import annotations

from typing import Literal, Optional, Union

from pydantic import BaseModel, Field


class ModelSpec(BaseModel):
    """How to build (or load) the prediction model.

    Height/width/channels default to the input image's shape.  The params
    file, when given, overrides the seeded parameters; architecture always
    comes from this spec since the fixture file stores the blob only.
    """

    kind: Literal["linear", "tinycnn", "toydetector"] = "toydetector"
    height: Optional[int] = None
    width: Optional[int] = None
    channels: Optional[int] = None
    num_classes: int = 4
    num_filters: int = 8
    num_detections: int = 64
    seed: int = 0
    bias: float = 0.0
    params_path: Optional[str] = None


class SegmentationSpec(BaseModel):
    kind: Literal["slic", "grid"] = "slic"
    num_segments: int = 200
    compactness: float = 10.0
    max_iters: int = 10
    enforce_connectivity: bool = True
    rows: int = 4
    cols: int = 4


class MethodConfig(BaseModel):
    method: Literal["shapley", "lime", "ig", "ig_seg", "e2x", "pda"]
    k: Optional[int] = None
    seed: Optional[int] = None
    kernel_width: Optional[float] = None
    ridge_lambda: Optional[float] = None
    kernel: Optional[Literal["exponential", "shapley"]] = None
    enumerate_all: Optional[bool] = None
    window: Optional[tuple[int, int]] = None
    stride: Optional[int] = None
    fill: Optional[Literal["mean", "reference"]] = None

    def params(self) -> dict:
        out = {}
        for key in ("k", "seed", "kernel_width", "ridge_lambda", "kernel",
                    "enumerate_all", "window", "stride", "fill"):
            val = getattr(self, key)
            if val is not None:
                out[key] = val
        return out

    def label(self) -> str:
        extras = ",".join(f"{k}={v}" for k, v in sorted(self.params().items()))
        return self.method + (f":{extras}" if extras else "")


class TargetSpec(BaseModel):
    """What to explain: a raw output index, or the k-th most confident
    candidate detection (detector models only)."""

    output_index: Optional[int] = None
    detection_rank: Optional[int] = None


class RenderOptions(BaseModel):
    alpha: float = Field(0.6, ge=0.0, le=1.0)
    gamma: float = Field(1.0, gt=0.0)


MeanField = Union[Literal["auto"], list[float], None]


class ExplainRequest(BaseModel):
    model: ModelSpec = ModelSpec()
    image_path: str
    channel_mean: MeanField = "auto"
    segmentation: SegmentationSpec = SegmentationSpec()
    method: MethodConfig
    target: TargetSpec = TargetSpec()
    seed: Optional[int] = None
    output_dir: str = "."
    stem: Optional[str] = None
    render: RenderOptions = RenderOptions()


class ExplainResponse(BaseModel):
    method: str
    kind: Literal["vector", "map"]
    output_index: int
    csv_path: str
    segments_csv_path: Optional[str] = None
    png_path: str
    phi0: Optional[float] = None
    num_segments: Optional[int] = None
    degenerate: bool = False
    forwards: int
    backwards: int
    ms: float


class FindFailuresRequest(BaseModel):
    image_path: str
    groundtruth_path: str
    model: Optional[ModelSpec] = ModelSpec()
    detections_path: Optional[str] = None
    image_id: Optional[str] = None
    channel_mean: MeanField = "auto"
    conf_thr: float = 0.5
    iou_thr: float = 0.5
    low_thr: float = 0.01
    min_iou: float = 0.1
    output_dir: str = "."
    stem: Optional[str] = None


class FindFailuresResponse(BaseModel):
    report_path: str
    num_tp: int
    num_fp: int
    num_fn: int
    num_fn_candidates: int
    num_unexplainable: int


class BenchmarkRequest(BaseModel):
    model: ModelSpec = ModelSpec()
    image_paths: list[str]
    channel_mean: MeanField = "auto"
    segmentation: SegmentationSpec = SegmentationSpec()
    reference: MethodConfig
    candidates: list[MethodConfig]
    detections_per_image: int = 2
    seeds: list[int] = Field(default_factory=lambda: [0])
    workers: int = 1
    include_speed: bool = True
    output_dir: str = "."
    stem: str = "benchmark"


class BenchmarkResponse(BaseModel):
    csv_path: str
    summary_path: str
    summary: dict
    num_cases: int


class RenderRequest(BaseModel):
    csv_path: str
    image_path: str
    channel_mean: MeanField = "auto"
    segments_csv_path: Optional[str] = None
    alpha: float = Field(0.6, ge=0.0, le=1.0)
    gamma: float = Field(1.0, gt=0.0)
    output_path: str


class RenderResponse(BaseModel):
    png_path: str
    degenerate: bool


class SelftestRequest(BaseModel):
    seed: int = 0


class SelftestResponse(BaseModel):
    ok: bool
    lines: list[str]
