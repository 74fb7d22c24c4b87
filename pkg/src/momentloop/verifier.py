"""Candidate verification: zoom-in, boundary-marker layout, yes/no scoring, selection."""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .moments import interval_iou
from .types import Moment, clamp_moment

YES_NO_FALLBACK = {"yes": 0.99, "no": 0.01}


class VerifierError(ValueError):
    pass


@dataclass(frozen=True)
class VerifierScore:
    candidate_index: int
    l_yes: float
    l_no: float
    score: float


@dataclass(frozen=True)
class SegmentLayout:
    expanded: Moment
    frame_times: tuple
    start_insert_index: int
    end_insert_index: int
    empty: bool = False


def zoom_in(m: Moment, duration: float, ratio: float = 0.5) -> Moment:
    """Push each boundary outward by ``ratio`` times the moment length, then clamp."""
    if m.length <= 0:
        raise VerifierError("cannot zoom into a zero-length moment")
    if not m.within(duration):
        raise VerifierError(f"moment [{m.start}, {m.end}] outside [0, {duration}]")
    pad = ratio * m.length
    return clamp_moment(Moment(m.start - pad, m.end + pad, m.score), duration)


def sample_frames(segment: Moment, n: int) -> tuple:
    """Centers of ``n`` equal bins spanning the segment."""
    if n < 1:
        raise ValueError("need at least one frame")
    step = segment.length / n
    return tuple(float(x) for x in segment.start + (np.arange(n) + 0.5) * step)


def layout_segment_tokens(original: Moment, frame_times: Sequence[float],
                          expanded: Moment | None = None) -> SegmentLayout:
    """Marker positions: start before the first frame >= start, end after the last frame <= end.

    When no frame falls inside ``original`` both markers collapse onto the
    insertion point of ``original.start`` and the layout is flagged empty.
    """
    times = [float(t) for t in frame_times]
    if any(b < a for a, b in zip(times, times[1:])):
        raise VerifierError("frame times must be ascending")
    start_idx = bisect.bisect_left(times, original.start)
    end_idx = bisect.bisect_right(times, original.end)
    empty = end_idx <= start_idx
    if empty:
        end_idx = start_idx
    if expanded is None:
        expanded = Moment(min(times[0], original.start), max(times[-1], original.end)) if times else original
    return SegmentLayout(expanded, tuple(times), start_idx, end_idx, empty)


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    z = math.exp(x)
    return z / (1.0 + z)


def score_candidate(l_yes: float, l_no: float, candidate_index: int = 0) -> VerifierScore:
    if not (math.isfinite(l_yes) and math.isfinite(l_no)):
        raise VerifierError(f"non-finite log-likelihoods ({l_yes}, {l_no})")
    return VerifierScore(candidate_index, float(l_yes), float(l_no), _sigmoid(l_yes - l_no))


def select_best(scores: Sequence[VerifierScore], cands: Sequence[Moment]) -> tuple[Moment, int]:
    if not scores:
        raise VerifierError("no candidates to select from")
    if len(scores) != len(cands):
        raise VerifierError(f"{len(scores)} scores for {len(cands)} candidates")
    best = min(scores, key=lambda s: (-s.score, s.candidate_index))
    return cands[best.candidate_index], best.candidate_index


def assign_verifier_label(cand: Moment, gt: Moment, threshold: float = 0.5) -> bool:
    return interval_iou(cand, gt) >= threshold
