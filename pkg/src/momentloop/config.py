"""Run configuration loaded from JSON; every numeric default can be overridden."""

from __future__ import annotations

import json
from dataclasses import MISSING, dataclass, field, fields
from typing import Optional

from .decoder import DecoderConfig
from .http_backend import HttpBackendConfig
from .orchestrator import PipelineConfig
from .training import LossParams


class ConfigError(ValueError):
    pass


@dataclass
class MockConfig:
    seed: int = 0
    weights: Optional[str] = None
    features_dir: Optional[str] = None


@dataclass
class Config:
    decoder: Optional[DecoderConfig] = None
    loss: LossParams = field(default_factory=LossParams)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    backend: HttpBackendConfig = field(default_factory=HttpBackendConfig)
    mock: MockConfig = field(default_factory=MockConfig)
    max_offset_units: float = 8.0
    workers: int = 1


_ANNOTATED = {"int": 0, "float": 0.0, "str": "", "bool": False}


def _default(f):
    if f.default is not MISSING:
        return f.default
    if f.default_factory is not MISSING:
        return f.default_factory()
    return _ANNOTATED.get(f.type if isinstance(f.type, str) else f.type.__name__)


def _check_type(f, value, where):
    """Values must have the type of the field's default (ints may stand in for floats)."""
    ref = _default(f)
    if ref is None:
        ok = value is None or isinstance(value, str)
    elif isinstance(ref, bool):
        ok = isinstance(value, bool)
    elif isinstance(ref, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(ref, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    else:
        ok = isinstance(value, type(ref))
    if not ok:
        raise ConfigError(f"{where}.{f.name}: expected {type(ref).__name__ if ref is not None else 'string'}, "
                          f"got {type(value).__name__}")


def _build(cls, d, where):
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected an object")
    names = {f.name for f in fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    for f in fields(cls):
        if f.name in d:
            _check_type(f, d[f.name], where)
    try:
        return cls(**d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def config_from_dict(d: dict) -> Config:
    if not isinstance(d, dict):
        raise ConfigError("config must be a JSON object")
    sections = {
        "decoder": DecoderConfig,
        "loss": LossParams,
        "pipeline": PipelineConfig,
        "backend": HttpBackendConfig,
        "mock": MockConfig,
    }
    unknown = set(d) - set(sections) - {"max_offset_units", "workers"}
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    kwargs = {k: _build(cls, d[k], k) for k, cls in sections.items() if k in d}
    for k in ("max_offset_units", "workers"):
        if k in d:
            if not isinstance(d[k], (int, float)) or isinstance(d[k], bool) or d[k] <= 0:
                raise ConfigError(f"{k}: expected a positive number")
            kwargs[k] = d[k]
    cfg = Config(**kwargs)
    p = cfg.pipeline
    if p.top_k < 0 or not 0 <= p.nms_threshold <= 1 or p.zoom_ratio < 0 or p.frames_per_segment < 1 \
            or p.verifier_concurrency < 1:
        raise ConfigError("pipeline: values out of range")
    if not isinstance(cfg.backend.urls, dict):
        raise ConfigError("backend.urls: expected an object mapping role to URL")
    return cfg


def load_config(path: Optional[str]) -> Config:
    if path is None:
        return Config()
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
    return config_from_dict(data)
