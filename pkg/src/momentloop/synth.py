"""Synthetic clips whose REG-correlated frames mark the ground-truth moment."""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .types import AnnotationRecord, FeatureSequence, Moment, RegToken

OPTION_LETTERS = "ABCD"


@dataclass(frozen=True)
class SynthSpec:
    t: int = 16
    h: int = 2
    w: int = 2
    d: int = 8
    frame_seconds: float = 2.0
    min_len: int = 4
    max_len: int = 8
    signal: float = 2.0
    noise: float = 0.3


@dataclass(frozen=True, eq=False)
class SynthClip:
    video_id: str
    features: FeatureSequence
    reg: RegToken
    gt: Moment
    duration: float


def query_vector(d: int, seed: int = 0) -> np.ndarray:
    v = np.random.default_rng([seed, 7]).normal(size=d)
    return v / np.linalg.norm(v)


def make_clip(rng: np.random.Generator, spec: SynthSpec, query: np.ndarray, video_id: str) -> SynthClip:
    n = int(rng.integers(spec.min_len, spec.max_len + 1))
    a = int(rng.integers(0, spec.t - n + 1))
    reg = query + 0.1 * rng.normal(size=spec.d)
    direction = reg / np.linalg.norm(reg)
    values = spec.noise * rng.normal(size=(spec.t, spec.h, spec.w, spec.d))
    values[a:a + n] += spec.signal * direction
    duration = spec.t * spec.frame_seconds
    times = (np.arange(spec.t) + 0.5) * spec.frame_seconds
    return SynthClip(
        video_id=video_id,
        features=FeatureSequence(values, times),
        reg=RegToken(reg),
        gt=Moment(a * spec.frame_seconds, (a + n) * spec.frame_seconds),
        duration=duration,
    )


def make_dataset(seed: int, count: int, spec: SynthSpec = SynthSpec(), prefix: str = "synth") -> list[SynthClip]:
    rng = np.random.default_rng(seed)
    q = query_vector(spec.d)
    return [make_clip(rng, spec, q, f"{prefix}_{seed}_{i:04d}") for i in range(count)]


def clip_annotation(clip: SynthClip, index: int) -> AnnotationRecord:
    # first two samples of every three carry a multiple-choice question
    options = None
    answer = None
    question = None
    if index % 3 != 2:
        options = tuple(f"the marked event happens in segment {k}" for k in range(4))
        answer = int(clip.gt.start // (clip.duration / 4)) % 4
        question = "Which segment contains the marked event?"
    return AnnotationRecord(
        video_id=clip.video_id,
        duration=clip.duration,
        query="the marked event",
        gt_moments=(clip.gt,),
        question=question,
        options=options,
        answer_index=answer,
    )


def write_dataset(out_dir, n: int, seed: int, spec: SynthSpec = SynthSpec()) -> list[AnnotationRecord]:
    from .io import save_annotations, save_features

    os.makedirs(os.path.join(out_dir, "features"), exist_ok=True)
    clips = make_dataset(seed, n, spec)
    records = []
    for i, clip in enumerate(clips):
        save_features(os.path.join(out_dir, "features", f"{clip.video_id}.json"), clip.features, clip.reg)
        records.append(clip_annotation(clip, i))
    save_annotations(os.path.join(out_dir, "annotations.jsonl"), records)
    return records
