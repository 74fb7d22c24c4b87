"""Timestamp decoder: frame pooling, fusion transformer, temporal pyramid and heads.

All math runs in float64 through torch so the same code path serves
inference, training and gradient checks.
"""

from __future__ import annotations

import math
from functools import lru_cache
from collections import OrderedDict
from dataclasses import asdict, dataclass, fields
from typing import Dict, Optional

import numpy as np
import torch
import torch.nn.functional as F

from .moments import nms, top_k
from .types import FeatureSequence, Moment, RegToken, clamp_moment

DTYPE = torch.float64
LN_EPS = 1e-5


class DecoderShapeError(ValueError):
    pass


class DecoderNumericError(ArithmeticError):
    pass


@dataclass(frozen=True)
class DecoderConfig:
    d_input: int
    d_model: int = 256
    n_layers: int = 3
    n_heads: int = 8
    pyramid_levels: int = 4
    ffn_mult: int = 4
    pe_base: float = 10000.0

    def __post_init__(self):
        if self.d_model <= 0 or self.d_input <= 0:
            raise ValueError("d_model and d_input must be positive")
        if self.n_heads <= 0 or self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if self.pyramid_levels < 1:
            raise ValueError("pyramid_levels must be >= 1")
        if self.n_layers < 0 or self.ffn_mult < 1:
            raise ValueError("n_layers must be >= 0 and ffn_mult >= 1")

    def check_length(self, t: int) -> None:
        stride = 2 ** (self.pyramid_levels - 1)
        if t < stride or t % stride:
            raise DecoderShapeError(
                f"T={t} not divisible by 2^(levels-1)={stride}"
            )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DecoderConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown decoder config keys: {sorted(unknown)}")
        return cls(**d)


def parameter_shapes(cfg: DecoderConfig) -> "OrderedDict[str, tuple]":
    D, DL, FF = cfg.d_model, cfg.d_input, cfg.d_model * cfg.ffn_mult
    shapes: "OrderedDict[str, tuple]" = OrderedDict()
    shapes["proj_v.weight"] = (D, DL)
    shapes["proj_v.bias"] = (D,)
    shapes["proj_r.weight"] = (D, DL)
    shapes["proj_r.bias"] = (D,)
    shapes["mod_v"] = (D,)
    shapes["mod_r"] = (D,)
    for i in range(cfg.n_layers):
        p = f"layers.{i}."
        for name in ("q", "k", "v", "o"):
            shapes[p + f"attn.{name}.weight"] = (D, D)
            shapes[p + f"attn.{name}.bias"] = (D,)
        shapes[p + "ln1.gain"] = (D,)
        shapes[p + "ln1.bias"] = (D,)
        shapes[p + "ffn1.weight"] = (FF, D)
        shapes[p + "ffn1.bias"] = (FF,)
        shapes[p + "ffn2.weight"] = (D, FF)
        shapes[p + "ffn2.bias"] = (D,)
        shapes[p + "ln2.gain"] = (D,)
        shapes[p + "ln2.bias"] = (D,)
    for lvl in range(1, cfg.pyramid_levels):
        p = f"pyramid.{lvl}."
        shapes[p + "conv.weight"] = (D, D, 2)
        shapes[p + "conv.bias"] = (D,)
        shapes[p + "ln.gain"] = (D,)
        shapes[p + "ln.bias"] = (D,)
    for head, out in (("cls_head", 1), ("reg_head", 2)):
        shapes[f"{head}.conv1.weight"] = (D, D, 3)
        shapes[f"{head}.conv1.bias"] = (D,)
        shapes[f"{head}.conv2.weight"] = (out, D, 3)
        shapes[f"{head}.conv2.bias"] = (out,)
    shapes["level_scales"] = (cfg.pyramid_levels,)
    return shapes


class DecoderWeights:
    """Named float64 tensors of the decoder, in manifest order."""

    def __init__(self, cfg: DecoderConfig, tensors: Dict[str, np.ndarray]):
        expected = parameter_shapes(cfg)
        missing = set(expected) - set(tensors)
        extra = set(tensors) - set(expected)
        if missing or extra:
            raise DecoderShapeError(
                f"weight names mismatch: missing={sorted(missing)} extra={sorted(extra)}"
            )
        self.cfg = cfg
        self.tensors: "OrderedDict[str, np.ndarray]" = OrderedDict()
        for name, shape in expected.items():
            arr = np.array(tensors[name], dtype=np.float64)
            if arr.shape != shape:
                raise DecoderShapeError(f"tensor {name}: shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise DecoderNumericError(f"tensor {name} has non-finite values")
            self.tensors[name] = arr
        if np.any(self.tensors["level_scales"] <= 0):
            raise DecoderNumericError("level_scales must be positive")

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def names(self):
        return list(self.tensors)

    def as_torch(self, requires_grad: bool = False) -> "OrderedDict[str, torch.Tensor]":
        out = OrderedDict()
        for k, v in self.tensors.items():
            t = torch.tensor(v, dtype=DTYPE)
            if requires_grad:
                t.requires_grad_(True)
            out[k] = t
        return out

    @classmethod
    def from_torch(cls, cfg: DecoderConfig, tensors) -> "DecoderWeights":
        return cls(cfg, {k: v.detach().cpu().numpy().copy() for k, v in tensors.items()})

    def num_parameters(self) -> int:
        return sum(v.size for v in self.tensors.values())


def init_weights(cfg: DecoderConfig, seed: int = 0) -> DecoderWeights:
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in parameter_shapes(cfg).items():
        if name.endswith(".bias"):
            tensors[name] = np.zeros(shape)
        elif name.endswith(".gain"):
            tensors[name] = np.ones(shape)
        elif name == "level_scales":
            tensors[name] = np.ones(shape)
        elif name in ("mod_v", "mod_r"):
            tensors[name] = rng.normal(0.0, 0.02, size=shape)
        else:
            fan_in = int(np.prod(shape[1:]))
            tensors[name] = rng.normal(0.0, 1.0 / math.sqrt(fan_in), size=shape)
    return DecoderWeights(cfg, tensors)


@dataclass(frozen=True, eq=False)
class ForwardTrace:
    pooled: np.ndarray
    embedded_v: np.ndarray
    embedded_r: np.ndarray
    fused_v: np.ndarray
    fused_r: np.ndarray
    pyramid: Optional[np.ndarray] = None
    cls_scores: Optional[np.ndarray] = None
    offsets: Optional[np.ndarray] = None
    frame_sims: Optional[np.ndarray] = None
    anchor_index: Optional[np.ndarray] = None

    @property
    def t(self) -> int:
        return self.pooled.shape[0]

    def arrays(self) -> "OrderedDict[str, np.ndarray]":
        out = OrderedDict()
        for f in fields(self):
            v = getattr(self, f.name)
            if v is not None:
                out[f.name] = v
        return out


# ---- primitives -------------------------------------------------------------


def avg_pool_frames(f: FeatureSequence) -> np.ndarray:
    return f.values.reshape(f.t, f.h * f.w, f.d).mean(axis=1)


def sinusoidal_pe(t_index: int, T: int, d: int, base: float = 10000.0) -> np.ndarray:
    """sin/cos encoding of integer frame index ``t_index`` (even dims sin, odd dims cos)."""
    if not 0 <= t_index < T:
        raise ValueError(f"t_index {t_index} outside [0, {T})")
    i = np.arange(d)
    freq = base ** (-(i - i % 2) / d)
    angle = t_index * freq
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


@lru_cache(maxsize=64)
def positional_table(T: int, d: int, base: float) -> np.ndarray:
    table = np.stack([sinusoidal_pe(t, T, d, base) for t in range(T)])
    table.setflags(write=False)
    return table


def _layer_norm(x, gain, bias):
    return F.layer_norm(x, (x.shape[-1],), gain, bias, LN_EPS)


def _attention(x, w, prefix, n_heads):
    n, d = x.shape
    hd = d // n_heads
    q = F.linear(x, w[prefix + "q.weight"], w[prefix + "q.bias"]).view(n, n_heads, hd).transpose(0, 1)
    k = F.linear(x, w[prefix + "k.weight"], w[prefix + "k.bias"]).view(n, n_heads, hd).transpose(0, 1)
    v = F.linear(x, w[prefix + "v.weight"], w[prefix + "v.bias"]).view(n, n_heads, hd).transpose(0, 1)
    att = torch.softmax(q @ k.transpose(1, 2) / math.sqrt(hd), dim=-1)
    out = (att @ v).transpose(0, 1).reshape(n, d)
    return F.linear(out, w[prefix + "o.weight"], w[prefix + "o.bias"])


def _encoder_layer(x, w, i, n_heads):
    p = f"layers.{i}."
    x = _layer_norm(x + _attention(x, w, p + "attn.", n_heads), w[p + "ln1.gain"], w[p + "ln1.bias"])
    h = F.gelu(F.linear(x, w[p + "ffn1.weight"], w[p + "ffn1.bias"]))
    h = F.linear(h, w[p + "ffn2.weight"], w[p + "ffn2.bias"])
    return _layer_norm(x + h, w[p + "ln2.gain"], w[p + "ln2.bias"])


def _conv_head(x, w, head):
    # x: (D, n) for one pyramid level
    h = F.relu(F.conv1d(x[None], w[head + ".conv1.weight"], w[head + ".conv1.bias"], padding=1))
    return F.conv1d(h, w[head + ".conv2.weight"], w[head + ".conv2.bias"], padding=1)[0]


def _to_tensor(a) -> torch.Tensor:
    return torch.tensor(np.asarray(a, dtype=np.float64), dtype=DTYPE)


def forward_tensors(w, pooled: torch.Tensor, reg: torch.Tensor, cfg: DecoderConfig, stage: str = "heads"):
    """Differentiable forward pass over a weight dict of tensors.

    ``pooled`` is the (T, D_L) frame matrix, ``reg`` the (D_L,) REG token.
    Returns a dict of intermediate tensors up to ``stage`` ("fuse", "pyramid", "heads").
    """
    T = pooled.shape[0]
    out = {}
    e_v = F.linear(pooled, w["proj_v.weight"], w["proj_v.bias"])
    e_r = F.linear(reg[None], w["proj_r.weight"], w["proj_r.bias"])
    pe = _to_tensor(positional_table(T, cfg.d_model, cfg.pe_base))
    x = torch.cat([e_v + w["mod_v"] + pe, e_r + w["mod_r"]], dim=0)
    for i in range(cfg.n_layers):
        x = _encoder_layer(x, w, i, cfg.n_heads)
    out.update(embedded_v=e_v, embedded_r=e_r, fused_v=x[:T], fused_r=x[T:])
    if stage == "fuse":
        return out

    cfg.check_length(T)
    levels = [x[:T]]
    for lvl in range(1, cfg.pyramid_levels):
        p = f"pyramid.{lvl}."
        y = F.conv1d(levels[-1].T[None], w[p + "conv.weight"], w[p + "conv.bias"], stride=2)[0].T
        levels.append(F.silu(_layer_norm(y, w[p + "ln.gain"], w[p + "ln.bias"])))
    out["levels"] = levels
    out["pyramid"] = torch.cat(levels, dim=0)
    if stage == "pyramid":
        return out

    logits, offsets = [], []
    for lvl, feat in enumerate(levels):
        logits.append(_conv_head(feat.T, w, "cls_head")[0])
        raw = _conv_head(feat.T, w, "reg_head").T
        offsets.append(torch.exp(raw) * w["level_scales"][lvl])
    out["cls_logits"] = torch.cat(logits)
    out["cls_scores"] = torch.sigmoid(out["cls_logits"])
    out["offsets"] = torch.cat(offsets, dim=0)
    out["frame_sims"] = F.cosine_similarity(out["pyramid"], x[T:], dim=-1, eps=1e-12)
    return out


def anchor_index(T: int, levels: int) -> np.ndarray:
    """(level, within-level index) for every pyramid position."""
    rows = [(lvl, j) for lvl in range(levels) for j in range(T >> lvl)]
    return np.array(rows, dtype=np.int64).reshape(-1, 2)


def pyramid_length(T: int, levels: int) -> int:
    return sum(T >> lvl for lvl in range(levels))


def _np(t: torch.Tensor) -> np.ndarray:
    return t.detach().cpu().numpy().copy()


def _check_inputs(f: FeatureSequence, r: RegToken, w: DecoderWeights, cfg: DecoderConfig):
    if f.d != cfg.d_input or r.d != cfg.d_input:
        raise DecoderShapeError(
            f"feature dim {f.d} / REG dim {r.d} != decoder d_input {cfg.d_input}"
        )
    if w.cfg != cfg:
        raise DecoderShapeError("weights were built for a different decoder config")


def _run(f, r, w, cfg, stage):
    _check_inputs(f, r, w, cfg)
    pooled = avg_pool_frames(f)
    with torch.no_grad():
        out = forward_tensors(w.as_torch(), _to_tensor(pooled), _to_tensor(r.values), cfg, stage)
    for k, v in out.items():
        if isinstance(v, torch.Tensor) and not torch.all(torch.isfinite(v)):
            raise DecoderNumericError(f"non-finite values in {k}")
    return pooled, out


def fuse(f: FeatureSequence, r: RegToken, w: DecoderWeights, cfg: DecoderConfig) -> ForwardTrace:
    pooled, out = _run(f, r, w, cfg, "fuse")
    return ForwardTrace(
        pooled=pooled,
        embedded_v=_np(out["embedded_v"]),
        embedded_r=_np(out["embedded_r"]),
        fused_v=_np(out["fused_v"]),
        fused_r=_np(out["fused_r"]),
    )


def build_pyramid(e_v: np.ndarray, w: DecoderWeights, cfg: DecoderConfig):
    """Returns (pyramid (L, D), anchor index (L, 2))."""
    T = e_v.shape[0]
    cfg.check_length(T)
    t = w.as_torch()
    levels = [_to_tensor(e_v)]
    with torch.no_grad():
        for lvl in range(1, cfg.pyramid_levels):
            p = f"pyramid.{lvl}."
            y = F.conv1d(levels[-1].T[None], t[p + "conv.weight"], t[p + "conv.bias"], stride=2)[0].T
            levels.append(F.silu(_layer_norm(y, t[p + "ln.gain"], t[p + "ln.bias"])))
    return _np(torch.cat(levels, dim=0)), anchor_index(T, cfg.pyramid_levels)


def predict_heads(pyramid: np.ndarray, fused_r: np.ndarray, w: DecoderWeights, cfg: DecoderConfig):
    """Returns (cls_scores (L,), offsets (L, 2), frame_sims (L,))."""
    L = pyramid.shape[0]
    T = L * 2 ** (cfg.pyramid_levels - 1) // (2 ** cfg.pyramid_levels - 1)
    if pyramid_length(T, cfg.pyramid_levels) != L:
        raise DecoderShapeError(f"pyramid length {L} is not a valid {cfg.pyramid_levels}-level length")
    t = w.as_torch()
    p = _to_tensor(pyramid)
    r = _to_tensor(fused_r).reshape(1, -1)
    scores, offsets = [], []
    with torch.no_grad():
        pos = 0
        for lvl in range(cfg.pyramid_levels):
            n = T >> lvl
            feat = p[pos:pos + n]
            pos += n
            scores.append(torch.sigmoid(_conv_head(feat.T, t, "cls_head")[0]))
            offsets.append(torch.exp(_conv_head(feat.T, t, "reg_head").T) * t["level_scales"][lvl])
        sims = F.cosine_similarity(p, r, dim=-1, eps=1e-12)
    return _np(torch.cat(scores)), _np(torch.cat(offsets, dim=0)), _np(sims)


def forward(f: FeatureSequence, r: RegToken, w: DecoderWeights, cfg: DecoderConfig) -> ForwardTrace:
    pooled, out = _run(f, r, w, cfg, "heads")
    return ForwardTrace(
        pooled=pooled,
        embedded_v=_np(out["embedded_v"]),
        embedded_r=_np(out["embedded_r"]),
        fused_v=_np(out["fused_v"]),
        fused_r=_np(out["fused_r"]),
        pyramid=_np(out["pyramid"]),
        cls_scores=_np(out["cls_scores"]),
        offsets=_np(out["offsets"]),
        frame_sims=_np(out["frame_sims"]),
        anchor_index=anchor_index(f.t, cfg.pyramid_levels),
    )


def decode_raw(trace: ForwardTrace, duration: float) -> list[Moment]:
    """Unclamped moment per pyramid position, scored by the classification head."""
    T = trace.t
    moments = []
    for (lvl, j), (bs, be), c in zip(trace.anchor_index, trace.offsets, trace.cls_scores):
        stride = 2 ** int(lvl)
        center = (j + 0.5) * stride
        start = (center - bs * stride) / T * duration
        end = (center + be * stride) / T * duration
        moments.append(Moment(start, end, float(c)))
    return moments


def decode_candidates(
    trace: ForwardTrace, duration: float, k: int = 5, iou_threshold: float = 0.75
) -> list[Moment]:
    if trace.cls_scores is None:
        raise ValueError("trace has no head outputs; run forward() first")
    clamped = [clamp_moment(m, duration) for m in decode_raw(trace, duration)]
    return top_k(nms(clamped, iou_threshold), k)
