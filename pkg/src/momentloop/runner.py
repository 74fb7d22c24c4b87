"""Batch execution of the reasoning loop over annotation files, and eval glue."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional, Sequence

from .decoder import decode_candidates, forward
from .io import answer_letter_correct, features_path, load_features, prediction_moments
from .metrics import (
    EvalInputError,
    EvalRecord,
    acc_at_gqa,
    acc_at_iou_avg,
    answer_accuracy,
    mean_iop,
    mean_iou,
    multi_moment_map,
    recall_at_iou,
    top1_iop,
)
from .orchestrator import PipelineConfig, VideoInput, ranked_predictions, run_pipeline
from .tensorio import load_weights
from .types import AnnotationRecord, Moment, VideoMeta


class DecoderGrounder:
    """Grounds with the timestamp decoder on precomputed features.

    The REG token stored next to each video's features stands in for the
    query encoding, so the query text itself is not consumed here.
    """

    def __init__(self, weights_path: str, features_dir: str, k: int = 5, nms_threshold: float = 0.75):
        self.weights = load_weights(weights_path)
        self.features_dir = features_dir
        self.k = k
        self.nms_threshold = nms_threshold

    def __call__(self, video: VideoInput, query: str) -> List[Moment]:
        feats, reg = load_features(features_path(self.features_dir, video.meta.video_id))
        trace = forward(feats, reg, self.weights, self.weights.cfg)
        return decode_candidates(trace, video.meta.duration, self.k, self.nms_threshold)


def _prediction(rec: AnnotationRecord, result) -> dict:
    d = {
        "video_id": rec.video_id,
        "moments": [[m.start, m.end, m.score] for m in ranked_predictions(result)],
        "plan": list(result.plan.roles),
    }
    if result.answer is not None:
        d["answer"] = result.answer
    if result.degraded:
        d["degraded"] = True
    return d


def run_batch(records: Sequence[AnnotationRecord], backend, cfg: PipelineConfig = PipelineConfig(),
              workers: int = 1, features_dir: Optional[str] = None) -> list:
    """One prediction dict per record, in input order."""

    def one(rec: AnnotationRecord):
        media = features_path(features_dir, rec.video_id) if features_dir else None
        video = VideoInput(VideoMeta(rec.video_id, rec.duration), media=media, subtitles=rec.subtitles)
        question = rec.question or rec.query
        return _prediction(rec, run_pipeline(video, question, backend, rec.options, cfg))

    if workers <= 1:
        return [one(r) for r in records]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, records))


def eval_records(preds: Sequence[dict], annotations: Sequence[AnnotationRecord]) -> List[EvalRecord]:
    by_id = {p["video_id"]: p for p in preds}
    out = []
    for a in annotations:
        p = by_id.get(a.video_id)
        if p is None:
            raise EvalInputError(f"no prediction for video {a.video_id!r}")
        correct = answer_letter_correct(p.get("answer"), a.answer_index)
        out.append(EvalRecord.from_predictions(a.video_id, prediction_moments(p), a.gt_moments, correct))
    return out


ALL_METRICS = ("riou", "miou", "miop", "riop", "gqa", "map", "cgacc", "acc")


def compute_report(records: Sequence[EvalRecord], metrics: Sequence[str],
                   thresholds: Sequence[float], cg_thresholds: Optional[Sequence[float]] = None) -> dict:
    unknown = set(metrics) - set(ALL_METRICS)
    if unknown:
        raise EvalInputError(f"unknown metrics {sorted(unknown)}")
    grounded = [r for r in records if r.gt_moments]
    answered = [r for r in records if r.answer_correct is not None]
    rep: dict = {"num_records": len(records)}
    if "riou" in metrics:
        rep["R@IoU"] = {f"{t:g}": v for t, v in recall_at_iou(grounded, thresholds).items()}
    if "miou" in metrics:
        rep["mIoU"] = mean_iou(grounded)
    if "riop" in metrics:
        rep["R@IoP"] = {f"{t:g}": v for t, v in recall_at_iou(grounded, thresholds, top1_iop).items()}
    if "miop" in metrics:
        rep["mIoP"] = mean_iop(grounded)
    if "map" in metrics:
        m = multi_moment_map(grounded)
        rep["mAP"] = {"average": m["average"], "per_threshold": {f"{t:g}": v for t, v in m["per_threshold"].items()}}
    if "acc" in metrics and answered:
        rep["Acc"] = answer_accuracy(answered)
    if "gqa" in metrics and answered:
        rep["Acc@GQA"] = acc_at_gqa(answered)
    if "cgacc" in metrics and answered:
        rep["Acc@IoU"] = acc_at_iou_avg(answered, cg_thresholds or (0.1, 0.2, 0.3, 0.4, 0.5))
    return rep


def flatten_report(rep: dict) -> List[tuple]:
    rows = []
    for key, val in rep.items():
        if isinstance(val, dict):
            for sub, v in val.items():
                if isinstance(v, dict):
                    rows.extend((f"AP@{t}", x) for t, x in v.items())
                else:
                    rows.append((f"{key}@{sub}" if sub != "average" else key, v))
        else:
            rows.append((key, val))
    return rows


def format_table(rep: dict) -> str:
    rows = flatten_report(rep)
    width = max(len(k) for k, _ in rows)
    lines = [f"{'metric'.ljust(width)}  value", f"{'-' * width}  {'-' * 8}"]
    for k, v in rows:
        val = str(v) if isinstance(v, int) else f"{v:.4f}"
        lines.append(f"{k.ljust(width)}  {val}")
    return "\n".join(lines)


def format_tsv(rep: dict) -> str:
    return "\n".join(["metric\tvalue"] + [f"{k}\t{v!r}" for k, v in flatten_report(rep)]) + "\n"


def ensure_dir(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path
