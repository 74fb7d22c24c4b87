"""HTTP role backend: one POST endpoint per role.

Request body::

    {"role": "verifier", "prompt": "...", "media": {...},
     "generation": {...}, "return_logprobs": true}

Response body: ``{"text": "..."}`` plus, for the grounder, an optional
``"moments": [[start, end, score], ...]`` and, for the verifier, first-token
log-probabilities either as ``"first_token_logprobs": {"Yes": -0.1, "No": -2.4}``
or OpenAI-style under ``logprobs.content[0].top_logprobs``.
"""

from __future__ import annotations

import json
import logging
import math
import os
import re
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import httpx

from .orchestrator import SegmentSpec, VideoInput
from .prompts import render_prompt
from .types import Moment
from .verifier import YES_NO_FALLBACK, SegmentLayout

log = logging.getLogger(__name__)

TOKEN_ENV = "MOMENTLOOP_API_TOKEN"


class BackendError(RuntimeError):
    pass


@dataclass
class HttpBackendConfig:
    urls: Dict[str, str] = field(default_factory=dict)
    token_env: str = TOKEN_ENV
    timeout: float = 60.0
    retries: int = 2
    generation: dict = field(default_factory=lambda: {"temperature": 0.0, "max_new_tokens": 256})


def _media(video: VideoInput, segment: Optional[Moment] = None, layout: Optional[SegmentLayout] = None) -> dict:
    m = {
        "video_id": video.meta.video_id,
        "uri": video.media,
        "duration": video.meta.duration,
        "segment": None if segment is None else [segment.start, segment.end],
    }
    if layout is not None:
        m["frame_times"] = list(layout.frame_times)
        m["seg_start_index"] = layout.start_insert_index
        m["seg_end_index"] = layout.end_insert_index
    return m


def extract_yes_no(body: dict) -> Optional[tuple]:
    """First-token (log P(Yes), log P(No)) from a response, or None if absent."""
    table = body.get("first_token_logprobs")
    if table is None:
        try:
            tops = body["logprobs"]["content"][0]["top_logprobs"]
        except (KeyError, IndexError, TypeError):
            return None
        table = {}
        for t in tops:
            tok = str(t.get("token", "")).strip()
            if tok not in table:
                table[tok] = float(t["logprob"])
    table = {str(k).strip().strip("<>"): float(v) for k, v in table.items()}
    yes, no = table.get("Yes"), table.get("No")
    if yes is None and no is None:
        return None
    # a token outside the returned alternatives is bounded by the least likely one shown
    floor = min(table.values())
    return (floor if yes is None else yes), (floor if no is None else no)


def fallback_yes_no(text: str) -> tuple:
    word = re.sub(r"[^a-z]", "", (text or "").strip().split()[0].lower()) if (text or "").strip() else ""
    if word not in YES_NO_FALLBACK:
        raise BackendError(f"verifier answered {text!r}; expected Yes or No")
    p = YES_NO_FALLBACK[word]
    return math.log(p), math.log(1.0 - p)


def parse_moments(body: dict) -> List[Moment]:
    raw = body.get("moments")
    if raw is None:
        try:
            raw = json.loads(body.get("text", ""))
        except json.JSONDecodeError:
            raise BackendError("grounder response carries no moments") from None
    out = []
    for item in raw:
        out.append(Moment.from_list([float(x) for x in item]))
    return out


class HttpBackend:
    def __init__(self, cfg: HttpBackendConfig, client: Optional[httpx.Client] = None):
        self.cfg = cfg
        self.client = client or httpx.Client(timeout=cfg.timeout)
        token = os.environ.get(cfg.token_env)
        self.headers = {"Authorization": f"Bearer {token}"} if token else {}

    def _post(self, role: str, prompt: str, media: dict, logprobs: bool = False) -> dict:
        url = self.cfg.urls.get(role)
        if not url:
            raise BackendError(f"no URL configured for role {role!r}")
        payload = {"role": role, "prompt": prompt, "media": media,
                   "generation": dict(self.cfg.generation), "return_logprobs": logprobs}
        last = None
        for attempt in range(self.cfg.retries + 1):
            try:
                resp = self.client.post(url, json=payload, headers=self.headers)
            except httpx.TransportError as exc:
                last = exc
                log.warning("%s request failed (attempt %d): %s", role, attempt + 1, exc)
                continue
            if resp.status_code != 200:
                raise BackendError(f"{role} endpoint returned HTTP {resp.status_code}")
            try:
                body = resp.json()
            except ValueError:
                raise BackendError(f"{role} endpoint returned non-JSON body") from None
            if not isinstance(body, dict):
                raise BackendError(f"{role} endpoint returned {type(body).__name__}, expected object")
            return body
        raise BackendError(f"{role} endpoint unreachable after {self.cfg.retries + 1} attempts: {last}")

    def plan(self, video: VideoInput, question: str) -> str:
        body = self._post("planner", render_prompt("planner", question=question), _media(video))
        return str(body.get("text", ""))

    def ground(self, video: VideoInput, query: str) -> List[Moment]:
        body = self._post("grounder", render_prompt("grounder", query=query), _media(video))
        return parse_moments(body)

    def verify(self, segment: SegmentSpec, query: str, layout: SegmentLayout) -> tuple:
        body = self._post("verifier", render_prompt("verifier", query=query),
                          _media(segment.video, segment.segment, layout), logprobs=True)
        pair = extract_yes_no(body)
        if pair is None:
            log.info("verifier returned no log-probabilities; mapping text %r", body.get("text"))
            pair = fallback_yes_no(str(body.get("text", "")))
        return pair

    def answer(self, segment: SegmentSpec, question: str, options) -> str:
        seg = segment.segment
        duration = seg.length if seg is not None else segment.video.meta.duration
        prompt = render_prompt("answerer", duration=duration, question=question,
                               options=list(options) if options else None,
                               subtitles=segment.video.subtitles)
        body = self._post("answerer", prompt, _media(segment.video, seg))
        return str(body.get("text", "")).strip()
