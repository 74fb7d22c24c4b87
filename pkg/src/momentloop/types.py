"""Shared domain types: intervals, videos, features, annotations and results."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np


class MomentRangeError(ValueError):
    """A moment lies outside the video it refers to."""


@dataclass(frozen=True)
class Moment:
    """Closed time interval in seconds with an optional confidence.

    Raw decoder outputs may extend past the clip before clamping, so a
    negative start is accepted here; range checks against a duration
    happen where a duration is known.
    """

    start: float
    end: float
    score: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "start", float(self.start))
        object.__setattr__(self, "end", float(self.end))
        if not (math.isfinite(self.start) and math.isfinite(self.end)):
            raise ValueError(f"non-finite moment bounds ({self.start}, {self.end})")
        if self.start > self.end:
            raise ValueError(f"moment start {self.start} > end {self.end}")
        if self.score is not None:
            s = float(self.score)
            if not (0.0 <= s <= 1.0):
                raise ValueError(f"moment score {s} outside [0, 1]")
            object.__setattr__(self, "score", s)

    @property
    def length(self) -> float:
        return self.end - self.start

    def with_score(self, score: Optional[float]) -> "Moment":
        return Moment(self.start, self.end, score)

    def within(self, duration: float) -> bool:
        return 0.0 <= self.start and self.end <= duration

    def to_list(self) -> list:
        if self.score is None:
            return [self.start, self.end]
        return [self.start, self.end, self.score]

    @classmethod
    def from_list(cls, items: Sequence[float]) -> "Moment":
        if len(items) == 2:
            return cls(items[0], items[1])
        if len(items) == 3:
            return cls(items[0], items[1], items[2])
        raise ValueError(f"moment must have 2 or 3 entries, got {len(items)}")


def moment_normalize(m: Moment, duration: float) -> tuple[float, float]:
    if duration <= 0:
        raise MomentRangeError(f"duration must be positive, got {duration}")
    if not m.within(duration):
        raise MomentRangeError(f"moment [{m.start}, {m.end}] outside [0, {duration}]")
    return m.start / duration, m.end / duration


def moment_denormalize(frac: tuple[float, float], duration: float, score=None) -> Moment:
    return Moment(frac[0] * duration, frac[1] * duration, score)


def clamp_moment(m: Moment, duration: float) -> Moment:
    if duration <= 0:
        raise MomentRangeError(f"duration must be positive, got {duration}")
    start = min(max(m.start, 0.0), duration)
    end = min(max(m.end, 0.0), duration)
    return Moment(start, end, m.score)


@dataclass(frozen=True)
class VideoMeta:
    video_id: str
    duration: float
    frame_timestamps: tuple = ()

    def __post_init__(self):
        if not self.video_id:
            raise ValueError("video_id must be non-empty")
        if not (self.duration > 0 and math.isfinite(self.duration)):
            raise ValueError(f"duration must be positive, got {self.duration}")
        ts = tuple(float(t) for t in self.frame_timestamps)
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("frame timestamps must be strictly increasing")
        if ts and (ts[0] < 0 or ts[-1] > self.duration):
            raise ValueError("frame timestamps must lie within [0, duration]")
        object.__setattr__(self, "frame_timestamps", ts)


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=np.float64)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class FeatureSequence:
    """Per-frame token grid of shape (T, H, W, D) in float64."""

    values: np.ndarray
    frame_times: np.ndarray

    def __post_init__(self):
        values = _frozen(self.values)
        times = _frozen(self.frame_times)
        if values.ndim != 4:
            raise ValueError(f"features must be 4-D (T, H, W, D), got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("features contain non-finite values")
        if times.shape != (values.shape[0],):
            raise ValueError(f"frame_times length {times.shape} != T={values.shape[0]}")
        if np.any(np.diff(times) < 0):
            raise ValueError("frame_times must be ascending")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "frame_times", times)

    @property
    def t(self) -> int:
        return self.values.shape[0]

    @property
    def h(self) -> int:
        return self.values.shape[1]

    @property
    def w(self) -> int:
        return self.values.shape[2]

    @property
    def d(self) -> int:
        return self.values.shape[3]


@dataclass(frozen=True, eq=False)
class RegToken:
    values: np.ndarray

    def __post_init__(self):
        values = _frozen(self.values)
        if values.ndim != 1:
            raise ValueError(f"REG token must be 1-D, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("REG token contains non-finite values")
        object.__setattr__(self, "values", values)

    @property
    def d(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class AnnotationRecord:
    video_id: str
    duration: float
    query: str
    gt_moments: tuple = ()
    question: Optional[str] = None
    options: Optional[tuple] = None
    answer_index: Optional[int] = None
    subtitles: Optional[str] = None

    def __post_init__(self):
        if not self.video_id:
            raise ValueError("video_id must be non-empty")
        if not self.duration > 0:
            raise ValueError(f"duration must be positive, got {self.duration}")
        gts = tuple(self.gt_moments)
        for m in gts:
            if not m.within(self.duration):
                raise MomentRangeError(
                    f"gt moment [{m.start}, {m.end}] outside [0, {self.duration}]"
                )
        object.__setattr__(self, "gt_moments", gts)
        if self.options is not None:
            object.__setattr__(self, "options", tuple(self.options))
        if self.answer_index is not None and self.options is not None:
            if not 0 <= self.answer_index < len(self.options):
                raise ValueError(
                    f"answer_index {self.answer_index} out of range for {len(self.options)} options"
                )


@dataclass(frozen=True)
class TraceEntry:
    role: str
    input_digest: str
    output_digest: str


@dataclass(frozen=True)
class PipelineResult:
    plan: "object"
    answer: Optional[str] = None
    selected_moment: Optional[Moment] = None
    zoomed_moment: Optional[Moment] = None
    candidates: tuple = ()
    scores: tuple = ()
    trace: tuple = field(default_factory=tuple)
    degraded: bool = False

    def __post_init__(self):
        if self.selected_moment is not None and self.selected_moment not in self.candidates:
            raise ValueError("selected moment must be one of the candidates")
