"""Annotation, prediction and feature files."""

from __future__ import annotations

import json
import os
from typing import List, Optional

from .tensorio import TensorFileError, load_tensors, save_tensors
from .types import AnnotationRecord, FeatureSequence, Moment, RegToken


class SchemaError(ValueError):
    def __init__(self, path, line: int, field: str, message: str):
        super().__init__(f"{path}:{line}: field {field!r}: {message}")
        self.line = line
        self.field = field


def _num(x):
    if isinstance(x, float) and x.is_integer() and abs(x) < 2 ** 53:
        return int(x)
    return x


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False)


def _read_jsonl(path):
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                yield n, json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(path, n, "<line>", f"invalid JSON ({exc.msg})") from None


# ---- annotations ------------------------------------------------------------

_ANN_REQUIRED = {"video_id": str, "duration": (int, float), "query": str, "gt_moments": list}
_ANN_OPTIONAL = {"question": str, "options": list, "answer_index": int, "subtitles": str}


def annotation_from_dict(d: dict, path="<memory>", line: int = 0) -> AnnotationRecord:
    if not isinstance(d, dict):
        raise SchemaError(path, line, "<line>", "expected a JSON object")
    for key, typ in _ANN_REQUIRED.items():
        if key not in d:
            raise SchemaError(path, line, key, "missing")
        if not isinstance(d[key], typ) or isinstance(d[key], bool):
            raise SchemaError(path, line, key, f"wrong type {type(d[key]).__name__}")
    for key, typ in _ANN_OPTIONAL.items():
        if d.get(key) is not None and (not isinstance(d[key], typ) or isinstance(d[key], bool)):
            raise SchemaError(path, line, key, f"wrong type {type(d[key]).__name__}")
    unknown = set(d) - set(_ANN_REQUIRED) - set(_ANN_OPTIONAL)
    if unknown:
        raise SchemaError(path, line, sorted(unknown)[0], "unknown field")
    duration = float(d["duration"])
    gts = []
    for i, g in enumerate(d["gt_moments"]):
        try:
            m = Moment.from_list(g)
        except (TypeError, ValueError) as exc:
            raise SchemaError(path, line, f"gt_moments[{i}]", str(exc)) from None
        if not m.within(duration):
            raise SchemaError(path, line, f"gt_moments[{i}]",
                              f"[{m.start}, {m.end}] outside [0, {duration}]")
        gts.append(m)
    try:
        return AnnotationRecord(
            video_id=d["video_id"],
            duration=duration,
            query=d["query"],
            gt_moments=tuple(gts),
            question=d.get("question"),
            options=tuple(d["options"]) if d.get("options") is not None else None,
            answer_index=d.get("answer_index"),
            subtitles=d.get("subtitles"),
        )
    except ValueError as exc:
        field = "answer_index" if "answer_index" in str(exc) else "<record>"
        raise SchemaError(path, line, field, str(exc)) from None


def annotation_to_dict(r: AnnotationRecord) -> dict:
    d = {
        "video_id": r.video_id,
        "duration": _num(r.duration),
        "query": r.query,
        "gt_moments": [[_num(m.start), _num(m.end)] for m in r.gt_moments],
    }
    if r.question is not None:
        d["question"] = r.question
    if r.options is not None:
        d["options"] = list(r.options)
    if r.answer_index is not None:
        d["answer_index"] = r.answer_index
    if r.subtitles is not None:
        d["subtitles"] = r.subtitles
    return d


def load_annotations(path) -> List[AnnotationRecord]:
    records, seen = [], set()
    for n, d in _read_jsonl(path):
        rec = annotation_from_dict(d, path, n)
        if rec.video_id in seen:
            raise SchemaError(path, n, "video_id", f"duplicate id {rec.video_id!r}")
        seen.add(rec.video_id)
        records.append(rec)
    return records


def save_annotations(path, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(_dumps(annotation_to_dict(r)) + "\n")


# ---- predictions ------------------------------------------------------------


def validate_prediction(d: dict, path="<memory>", line: int = 0) -> dict:
    if not isinstance(d, dict):
        raise SchemaError(path, line, "<line>", "expected a JSON object")
    if not isinstance(d.get("video_id"), str) or not d["video_id"]:
        raise SchemaError(path, line, "video_id", "missing or not a string")
    if not isinstance(d.get("moments"), list):
        raise SchemaError(path, line, "moments", "missing or not a list")
    for i, m in enumerate(d["moments"]):
        if not (isinstance(m, list) and len(m) == 3 and all(isinstance(x, (int, float)) for x in m)):
            raise SchemaError(path, line, f"moments[{i}]", "expected [start, end, score]")
        try:
            Moment.from_list(m)
        except ValueError as exc:
            raise SchemaError(path, line, f"moments[{i}]", str(exc)) from None
    if not isinstance(d.get("plan"), list) or not all(isinstance(x, str) for x in d["plan"]):
        raise SchemaError(path, line, "plan", "missing or not a list of role names")
    if d.get("answer") is not None and not isinstance(d["answer"], str):
        raise SchemaError(path, line, "answer", "not a string")
    if d.get("degraded") is not None and not isinstance(d["degraded"], bool):
        raise SchemaError(path, line, "degraded", "not a boolean")
    unknown = set(d) - {"video_id", "moments", "plan", "answer", "degraded"}
    if unknown:
        raise SchemaError(path, line, sorted(unknown)[0], "unknown field")
    return d


def prediction_moments(d: dict) -> List[Moment]:
    return [Moment.from_list(m) for m in d["moments"]]


def save_predictions(path, preds) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for n, d in enumerate(preds, 1):
            validate_prediction(d, path, n)
            fh.write(_dumps(d) + "\n")


def load_predictions(path) -> List[dict]:
    return [validate_prediction(d, path, n) for n, d in _read_jsonl(path)]


# ---- features ---------------------------------------------------------------


def save_features(manifest_path, features: FeatureSequence, reg: RegToken,
                  blob_path=None) -> None:
    save_tensors(
        manifest_path,
        {"visual": features.values, "reg": reg.values, "frame_times": features.frame_times},
        meta={"kind": "features"},
        blob_path=blob_path,
    )


def load_features(manifest_path, blob_path=None):
    """Returns (FeatureSequence, RegToken)."""
    tensors, meta = load_tensors(manifest_path, blob_path)
    if meta.get("kind") != "features":
        raise TensorFileError(f"{manifest_path}: manifest is not a feature file")
    for name, ndim in (("visual", 4), ("reg", 1), ("frame_times", 1)):
        if name not in tensors:
            raise TensorFileError(f"{manifest_path}: missing tensor {name!r}")
        if tensors[name].ndim != ndim:
            raise TensorFileError(f"tensor {name!r}: expected {ndim}-D, got shape {tensors[name].shape}")
    visual = tensors["visual"]
    if tensors["reg"].shape[0] != visual.shape[3]:
        raise TensorFileError(
            f"tensor 'reg': length {tensors['reg'].shape[0]} != feature dim {visual.shape[3]}"
        )
    if tensors["frame_times"].shape[0] != visual.shape[0]:
        raise TensorFileError(
            f"tensor 'frame_times': length {tensors['frame_times'].shape[0]} != T={visual.shape[0]}"
        )
    return FeatureSequence(visual, tensors["frame_times"]), RegToken(tensors["reg"])


def features_path(features_dir, video_id: str) -> str:
    return os.path.join(features_dir, f"{video_id}.json")


def answer_letter_correct(answer: Optional[str], answer_index: Optional[int]) -> Optional[bool]:
    """Compares an option-letter answer such as "B" or "(B) ..." to the gt index."""
    if answer_index is None:
        return None
    if not answer:
        return False
    text = answer.strip().lstrip("(").upper()
    return bool(text) and text[0] == "ABCDEFGHIJ"[answer_index]

