"""Role orchestration: planner output parsing, backend dispatch and the reasoning loop."""

from __future__ import annotations

import hashlib
import json
import logging
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Protocol, Sequence

import numpy as np

from .moments import nms, rank_moments, top_k
from .types import Moment, PipelineResult, TraceEntry, VideoMeta, clamp_moment
from .verifier import (
    SegmentLayout,
    layout_segment_tokens,
    sample_frames,
    score_candidate,
    select_best,
    zoom_in,
)

log = logging.getLogger(__name__)

ROLES = ("planner", "grounder", "verifier", "answerer")
CANONICAL_PLANS = (
    ("grounder", "verifier", "answerer"),
    ("grounder", "verifier"),
    ("answerer",),
)


class PlanError(ValueError):
    pass


class PlanParseError(PlanError):
    pass


class PlanValidationError(PlanError):
    def __init__(self, message: str, position: Optional[int] = None):
        super().__init__(message if position is None else f"position {position}: {message}")
        self.position = position


class PipelineError(RuntimeError):
    def __init__(self, role: str, trace: Sequence[TraceEntry], cause: BaseException):
        super().__init__(f"{role} call failed: {cause}")
        self.role = role
        self.trace = tuple(trace)
        self.__cause__ = cause


@dataclass(frozen=True)
class RoleCall:
    role: str
    value: Optional[str] = None

    def __post_init__(self):
        if self.role not in ROLES:
            raise PlanValidationError(f"unknown role {self.role!r}")
        if (self.role == "grounder") != (self.value is not None):
            raise PlanValidationError("a value is required on grounder calls and only there")

    def to_json(self) -> dict:
        d = {"type": self.role}
        if self.value is not None:
            d["value"] = self.value
        return d


@dataclass(frozen=True)
class ReasoningPlan:
    calls: tuple

    def __post_init__(self):
        roles = tuple(c.role for c in self.calls)
        if roles not in CANONICAL_PLANS:
            raise PlanValidationError(
                f"non-canonical plan {list(roles)}", _first_offending_position(roles)
            )

    @property
    def roles(self) -> tuple:
        return tuple(c.role for c in self.calls)

    def has(self, role: str) -> bool:
        return role in self.roles

    @property
    def query(self) -> Optional[str]:
        for c in self.calls:
            if c.role == "grounder":
                return c.value
        return None

    def serialize(self) -> str:
        return json.dumps([c.to_json() for c in self.calls])


def _first_offending_position(roles: Sequence[str]) -> int:
    best = 0
    for plan in CANONICAL_PLANS:
        n = 0
        while n < min(len(plan), len(roles)) and plan[n] == roles[n]:
            n += 1
        best = max(best, n)
    return best


def _strip_fences(raw: str) -> str:
    text = raw.strip()
    if text.startswith("```"):
        text = text.split("\n", 1)[1] if "\n" in text else ""
        if text.rstrip().endswith("```"):
            text = text.rstrip()[:-3]
    return text.strip()


def parse_plan(raw: str) -> ReasoningPlan:
    try:
        data = json.loads(_strip_fences(raw))
    except (json.JSONDecodeError, TypeError) as exc:
        raise PlanParseError(f"plan is not valid JSON: {exc}") from None
    if not isinstance(data, list):
        raise PlanParseError(f"plan must be a JSON list, got {type(data).__name__}")
    calls = []
    for i, item in enumerate(data):
        if not isinstance(item, dict) or "type" not in item:
            raise PlanParseError(f"plan entry {i} is not an object with a 'type' key")
        extra = set(item) - {"type", "value"}
        if extra:
            raise PlanValidationError(f"unexpected keys {sorted(extra)}", i)
        role = item["type"]
        if not isinstance(role, str) or role.lower() not in ROLES:
            raise PlanValidationError(f"unknown role {role!r}", i)
        role = role.lower()
        value = item.get("value")
        if role == "grounder":
            if not isinstance(value, str) or not value.strip():
                raise PlanValidationError("grounder call needs a non-empty string value", i)
            value = value.strip()
        elif "value" in item:
            raise PlanValidationError(f"{role} call must not carry a value", i)
        calls.append(RoleCall(role, value))
    return ReasoningPlan(tuple(calls))


# ---- backend contract -------------------------------------------------------


@dataclass(frozen=True)
class VideoInput:
    meta: VideoMeta
    media: Optional[str] = None
    subtitles: Optional[str] = None


@dataclass(frozen=True)
class SegmentSpec:
    """A crop of a video; ``segment`` is None for the whole video."""

    video: VideoInput
    segment: Optional[Moment] = None


class RoleBackend(Protocol):
    def plan(self, video: VideoInput, question: str) -> str: ...

    def ground(self, video: VideoInput, query: str) -> List[Moment]: ...

    def verify(self, segment: SegmentSpec, query: str, layout: SegmentLayout) -> tuple: ...

    def answer(self, segment: SegmentSpec, question: str, options: Optional[Sequence[str]]) -> str: ...


@dataclass(frozen=True)
class PipelineConfig:
    top_k: int = 5
    nms_threshold: float = 0.75
    zoom_ratio: float = 0.5
    frames_per_segment: int = 32
    verifier_concurrency: int = 4


def _canon(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_json_default)


def _json_default(o):
    if isinstance(o, Moment):
        return o.to_list()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"not serializable: {type(o).__name__}")


def digest(obj) -> str:
    return hashlib.sha256(_canon(obj).encode()).hexdigest()[:16]


def _seg(m: Optional[Moment]):
    return None if m is None else [m.start, m.end]


def run_pipeline(video: VideoInput, question: str, backend: RoleBackend,
                 options: Optional[Sequence[str]] = None, cfg: PipelineConfig = PipelineConfig()
                 ) -> PipelineResult:
    trace: List[TraceEntry] = []
    vid = video.meta.video_id
    duration = video.meta.duration

    def call(role, fn):
        try:
            return fn()
        except Exception as exc:
            raise PipelineError(role, trace, exc) from exc

    raw = call("planner", lambda: backend.plan(video, question))
    try:
        plan = parse_plan(raw)
    except PlanError as exc:
        raise PipelineError("planner", trace, exc) from exc
    trace.append(TraceEntry("planner", digest({"video_id": vid, "question": question}), digest(raw)))

    candidates: tuple = ()
    scores: tuple = ()
    selected = zoomed = None
    degraded = False
    answer_segment: Optional[Moment] = None

    if plan.has("grounder"):
        query = plan.query
        got = call("grounder", lambda: backend.ground(video, query))
        cands = [clamp_moment(m, duration) for m in got]
        cands = [m for m in cands if m.length > 0]
        if cands and all(m.score is not None for m in cands):
            cands = nms(cands, cfg.nms_threshold)
        candidates = tuple(top_k(cands, cfg.top_k))
        trace.append(TraceEntry("grounder", digest({"video_id": vid, "query": query}),
                                digest([m.to_list() for m in candidates])))
        if candidates:
            zooms = [zoom_in(m, duration, cfg.zoom_ratio) for m in candidates]
            layouts = [
                layout_segment_tokens(m, sample_frames(z, cfg.frames_per_segment), z)
                for m, z in zip(candidates, zooms)
            ]

            def verify_one(i):
                return call("verifier", lambda: backend.verify(SegmentSpec(video, zooms[i]), query, layouts[i]))

            workers = max(1, min(cfg.verifier_concurrency, len(candidates)))
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(verify_one, range(len(candidates))))
            vs = []
            for i, (l_yes, l_no) in enumerate(results):
                vs.append(score_candidate(l_yes, l_no, i))
                lay = layouts[i]
                trace.append(TraceEntry(
                    "verifier",
                    digest({"video_id": vid, "segment": _seg(zooms[i]), "query": query,
                            "markers": [lay.start_insert_index, lay.end_insert_index]}),
                    digest([float(l_yes), float(l_no)]),
                ))
            scores = tuple(vs)
            selected, idx = select_best(vs, candidates)
            zoomed = zooms[idx]
            answer_segment = zoomed
        else:
            degraded = True
            log.warning("%s: grounder returned no usable candidates; answering on the whole video", vid)

    if plan.has("answerer"):
        spec = SegmentSpec(video, answer_segment)
        ans = call("answerer", lambda: backend.answer(spec, question, options))
        trace.append(TraceEntry(
            "answerer",
            digest({"video_id": vid, "segment": _seg(answer_segment), "question": question,
                    "options": list(options) if options else None}),
            digest(ans),
        ))
    else:
        ans = None

    return PipelineResult(
        plan=plan,
        answer=ans,
        selected_moment=selected,
        zoomed_moment=zoomed,
        candidates=candidates,
        scores=scores,
        trace=tuple(trace),
        degraded=degraded,
    )


def result_to_dict(r: PipelineResult) -> dict:
    return {
        "plan": [c.to_json() for c in r.plan.calls],
        "answer": r.answer,
        "selected_moment": None if r.selected_moment is None else r.selected_moment.to_list(),
        "zoomed_moment": None if r.zoomed_moment is None else r.zoomed_moment.to_list(),
        "candidates": [m.to_list() for m in r.candidates],
        "verifier_scores": [[s.candidate_index, s.l_yes, s.l_no, s.score] for s in r.scores],
        "trace": [[t.role, t.input_digest, t.output_digest] for t in r.trace],
        "degraded": r.degraded,
    }


def ranked_predictions(r: PipelineResult) -> List[Moment]:
    """Candidates re-scored by the verifier, best first; grounder order when unverified."""
    if not r.scores:
        return list(r.candidates)
    rescored = [r.candidates[s.candidate_index].with_score(s.score) for s in r.scores]
    return rank_moments(rescored)


# ---- mock backend -----------------------------------------------------------


@dataclass
class MockScript:
    plan: Optional[str] = None
    candidates: Optional[List[Moment]] = None
    verifier_scores: Optional[List[float]] = None
    answer: Optional[str] = None


def _logit_pair(score: float) -> tuple:
    s = min(max(score, 1e-12), 1 - 1e-12)
    return float(np.log(s)), float(np.log1p(-s))


class MockBackend:
    """Deterministic in-process backend.

    Scripted responses win; anything unscripted is derived from a seed and a
    hash of the call's inputs, so results do not depend on call order.
    ``grounder`` optionally replaces unscripted grounding (e.g. the decoder).
    """

    def __init__(self, scripts: Optional[Dict[str, MockScript]] = None, seed: int = 0,
                 grounder: Optional[Callable[[VideoInput, str], List[Moment]]] = None,
                 num_candidates: int = 5, zoom_ratio: float = 0.5):
        self.scripts = scripts or {}
        self.seed = seed
        self.grounder = grounder
        self.num_candidates = num_candidates
        self.zoom_ratio = zoom_ratio

    def _rng(self, *parts) -> np.random.Generator:
        return np.random.default_rng([self.seed, zlib.crc32(_canon(parts).encode())])

    def _script(self, video: VideoInput) -> MockScript:
        return self.scripts.get(video.meta.video_id, MockScript())

    def plan(self, video, question):
        s = self._script(video)
        if s.plan is not None:
            return s.plan
        if question.rstrip().endswith("?"):
            calls = [{"type": "grounder", "value": question}, {"type": "verifier"}, {"type": "answerer"}]
        else:
            calls = [{"type": "grounder", "value": question}, {"type": "verifier"}]
        return json.dumps(calls)

    def ground(self, video, query):
        s = self._script(video)
        if s.candidates is not None:
            return list(s.candidates)
        if self.grounder is not None:
            return self.grounder(video, query)
        rng = self._rng("ground", video.meta.video_id, query)
        d = video.meta.duration
        out = []
        for _ in range(self.num_candidates):
            a, b = np.sort(rng.uniform(0, d, size=2))
            out.append(Moment(float(a), float(b), float(rng.uniform(0.05, 0.95))))
        return out

    def verify(self, segment, query, layout):
        s = self._script(segment.video)
        if s.verifier_scores is not None and s.candidates is not None:
            # recover which scripted candidate this zoomed segment came from
            for i, m in enumerate(s.candidates):
                seg = segment.segment
                dur = segment.video.meta.duration
                z = zoom_in(clamp_moment(m, dur), dur, self.zoom_ratio)
                if seg is not None and abs(z.start - seg.start) < 1e-9 and abs(z.end - seg.end) < 1e-9:
                    return _logit_pair(s.verifier_scores[i])
            raise KeyError("segment does not match any scripted candidate")
        rng = self._rng("verify", segment.video.meta.video_id, _seg(segment.segment), query)
        l_yes, l_no = rng.normal(-1.0, 1.0, size=2)
        return float(l_yes), float(l_no)

    def answer(self, segment, question, options):
        s = self._script(segment.video)
        if s.answer is not None:
            return s.answer
        rng = self._rng("answer", segment.video.meta.video_id, _seg(segment.segment), question)
        if options:
            return "ABCDEFGHIJ"[int(rng.integers(len(options)))]
        return "yes" if rng.random() < 0.5 else "no"
