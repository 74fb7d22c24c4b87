"""Temporal grounding head, candidate verification and role orchestration at desk scale."""

__version__ = "0.1.0"

from .moments import interval_iop, interval_iou, nms, top_k
from .types import (
    AnnotationRecord,
    FeatureSequence,
    Moment,
    PipelineResult,
    RegToken,
    VideoMeta,
    clamp_moment,
    moment_normalize,
)

__all__ = [
    "AnnotationRecord",
    "FeatureSequence",
    "Moment",
    "PipelineResult",
    "RegToken",
    "VideoMeta",
    "clamp_moment",
    "interval_iop",
    "interval_iou",
    "moment_normalize",
    "nms",
    "top_k",
]
