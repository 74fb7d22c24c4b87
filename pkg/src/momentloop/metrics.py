"""Grounding and grounded-QA metrics: R@IoU, mIoU, mIoP, Acc@GQA, mAP, Acc@IoU."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from .moments import interval_iop, interval_iou, rank_moments
from .types import Moment

DEFAULT_RECALL_THRESHOLDS = (0.3, 0.5, 0.7)
MAP_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
CG_THRESHOLDS = (0.1, 0.2, 0.3, 0.4, 0.5)


class EvalInputError(ValueError):
    pass


@dataclass(frozen=True)
class EvalRecord:
    video_id: str
    top1: Optional[Moment]
    gt_moments: tuple
    all_preds: tuple = ()
    answer_correct: Optional[bool] = None

    @classmethod
    def from_predictions(cls, video_id: str, preds: Sequence[Moment], gt: Sequence[Moment],
                         answer_correct: Optional[bool] = None) -> "EvalRecord":
        preds = tuple(preds)
        return cls(video_id, preds[0] if preds else None, tuple(gt), preds, answer_correct)


def top1_iou(r: EvalRecord) -> float:
    if r.top1 is None or not r.gt_moments:
        return 0.0
    return max(interval_iou(r.top1, g) for g in r.gt_moments)


def top1_iop(r: EvalRecord) -> float:
    if r.top1 is None or not r.gt_moments:
        return 0.0
    return max(interval_iop(r.top1, g) for g in r.gt_moments)


def _nonempty(records):
    records = list(records)
    if not records:
        raise EvalInputError("no records to evaluate")
    return records


def _answers(records) -> np.ndarray:
    if any(r.answer_correct is None for r in records):
        missing = next(r.video_id for r in records if r.answer_correct is None)
        raise EvalInputError(f"record {missing!r} has no answer correctness")
    return np.array([bool(r.answer_correct) for r in records])


def recall_at_iou(records: Iterable[EvalRecord], thresholds: Sequence[float] = DEFAULT_RECALL_THRESHOLDS,
                  measure=top1_iou) -> Dict[float, float]:
    records = _nonempty(records)
    vals = np.array([measure(r) for r in records])
    return {float(t): float(np.mean(vals >= t)) for t in thresholds}


def mean_iou(records: Iterable[EvalRecord]) -> float:
    return float(np.mean([top1_iou(r) for r in _nonempty(records)]))


def mean_iop(records: Iterable[EvalRecord]) -> float:
    return float(np.mean([top1_iop(r) for r in _nonempty(records)]))


def answer_accuracy(records: Iterable[EvalRecord]) -> float:
    return float(np.mean(_answers(_nonempty(records))))


def acc_at_gqa(records: Iterable[EvalRecord], iop_threshold: float = 0.5) -> float:
    records = _nonempty(records)
    ok = _answers(records)
    grounded = np.array([top1_iop(r) >= iop_threshold for r in records])
    return float(np.mean(ok & grounded))


def acc_at_iou_avg(records: Iterable[EvalRecord], thresholds: Sequence[float] = CG_THRESHOLDS) -> float:
    records = _nonempty(records)
    ok = _answers(records)
    ious = np.array([top1_iou(r) for r in records])
    return float(np.mean([np.mean(ok & (ious >= t)) for t in thresholds]))


def _match_record(preds: Sequence[Moment], gts: Sequence[Moment], threshold: float) -> List[bool]:
    """Greedy matching in score order: each prediction takes the best unmatched gt."""
    free = list(range(len(gts)))
    hits = []
    for p in preds:
        best, best_iou = None, -1.0
        for g in free:
            iou = interval_iou(p, gts[g])
            if iou >= threshold and iou > best_iou:
                best, best_iou = g, iou
        if best is not None:
            free.remove(best)
        hits.append(best is not None)
    return hits


def average_precision(hits: Sequence[bool], num_gt: int) -> float:
    """All-point interpolated AP of a ranked hit list."""
    if num_gt == 0:
        return 0.0
    hits = np.asarray(hits, dtype=float)
    if hits.size == 0:
        return 0.0
    tp = np.cumsum(hits)
    precision = tp / np.arange(1, hits.size + 1)
    recall = tp / num_gt
    precision = np.concatenate([[0.0], precision, [0.0]])
    recall = np.concatenate([[0.0], recall, [recall[-1]]])
    precision = np.maximum.accumulate(precision[::-1])[::-1]
    steps = np.flatnonzero(recall[1:] != recall[:-1])
    return float(np.sum((recall[steps + 1] - recall[steps]) * precision[steps + 1]))


def multi_moment_map(records: Iterable[EvalRecord], thresholds: Sequence[float] = MAP_THRESHOLDS) -> dict:
    """AP per IoU threshold over the pooled, score-ranked predictions, plus their mean."""
    records = _nonempty(records)
    for r in records:
        if any(p.score is None for p in r.all_preds):
            raise EvalInputError(f"record {r.video_id!r} has unscored predictions")
    num_gt = sum(len(r.gt_moments) for r in records)
    per = {}
    for t in thresholds:
        pooled = []
        for ri, r in enumerate(records):
            ranked = rank_moments(r.all_preds)
            for rank, (p, hit) in enumerate(zip(ranked, _match_record(ranked, r.gt_moments, t))):
                pooled.append((-p.score, ri, rank, hit))
        pooled.sort()
        per[float(t)] = average_precision([h for *_, h in pooled], num_gt)
    return {"per_threshold": per, "average": float(np.mean(list(per.values())))}
