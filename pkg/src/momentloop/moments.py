"""Interval overlap measures and 1-D non-maximum suppression."""

from __future__ import annotations

from typing import Sequence

from .types import Moment


def _intersection(a: Moment, b: Moment) -> float:
    return max(0.0, min(a.end, b.end) - max(a.start, b.start))


def interval_iou(a: Moment, b: Moment) -> float:
    inter = _intersection(a, b)
    union = a.length + b.length - inter
    if union <= 0:
        # two zero-length intervals
        return 1.0 if (a.start == b.start and a.end == b.end) else 0.0
    return inter / union


def interval_iop(pred: Moment, gt: Moment) -> float:
    """Fraction of ``pred`` covered by ``gt``."""
    if pred.length <= 0:
        return 1.0 if gt.start <= pred.start <= gt.end else 0.0
    return _intersection(pred, gt) / pred.length


def _ranking(cands: Sequence[Moment]) -> list[int]:
    return sorted(range(len(cands)), key=lambda i: (-cands[i].score, cands[i].start, i))


def nms(cands: Sequence[Moment], iou_threshold: float = 0.75) -> list[Moment]:
    """Greedy suppression; a candidate is dropped when IoU with a kept one exceeds the threshold.

    Output is ordered by descending score, ties by earlier start then input index.
    """
    if any(c.score is None for c in cands):
        raise ValueError("nms requires scored moments")
    kept: list[Moment] = []
    for i in _ranking(cands):
        c = cands[i]
        if all(interval_iou(c, k) <= iou_threshold for k in kept):
            kept.append(c)
    return kept


def top_k(cands: Sequence[Moment], k: int = 5) -> list[Moment]:
    if k < 0:
        raise ValueError("k must be non-negative")
    return list(cands[:k])


def rank_moments(cands: Sequence[Moment]) -> list[Moment]:
    return [cands[i] for i in _ranking(cands)]
