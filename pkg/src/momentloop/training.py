"""Decoder losses, target assignment, gradient verification and a toy trainer."""

from __future__ import annotations

import logging
import math
from collections import OrderedDict
from dataclasses import asdict, dataclass, fields
from typing import Callable, Optional, Sequence

import numpy as np
import torch

from .decoder import (
    DTYPE,
    DecoderConfig,
    DecoderWeights,
    ForwardTrace,
    avg_pool_frames,
    forward,
    forward_tensors,
    init_weights,
)
from .types import FeatureSequence, Moment, MomentRangeError, RegToken

log = logging.getLogger(__name__)

EPS = 1e-12


class TrainingError(RuntimeError):
    def __init__(self, step: int, message: str):
        super().__init__(f"step {step}: {message}")
        self.step = step


@dataclass(frozen=True)
class LossParams:
    lambda_cls: float = 5.0
    lambda_reg: float = 1.0
    lambda_con: float = 0.05
    alpha: float = 0.9
    gamma: float = 2.0
    tau: float = 0.07

    def __post_init__(self):
        for f in fields(self):
            if not getattr(self, f.name) > 0:
                raise ValueError(f"{f.name} must be positive")
        if not self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "LossParams":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown loss keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True, eq=False)
class TargetAssignment:
    is_positive: np.ndarray        # (L,) bool
    offsets: np.ndarray            # (L, 2); zero on negatives
    positive_index: Optional[int]  # sampled positive for the contrastive term

    @property
    def num_positive(self) -> int:
        return int(self.is_positive.sum())

    def resample(self, rng: np.random.Generator) -> "TargetAssignment":
        pos = np.flatnonzero(self.is_positive)
        idx = int(rng.choice(pos)) if pos.size else None
        return TargetAssignment(self.is_positive, self.offsets, idx)


def assign_targets(gt: Moment, duration: float, T: int, levels: int,
                   max_offset_units: float = 8.0, rng: Optional[np.random.Generator] = None,
                   ) -> TargetAssignment:
    """Positives are positions whose center falls inside ``gt`` with offsets within range.

    Offsets are measured from the position center to each gt boundary, in
    units of the level's stride (2**level frames).
    """
    if not (duration > 0 and gt.within(duration)):
        raise MomentRangeError(f"gt [{gt.start}, {gt.end}] outside [0, {duration}]")
    gs, ge = gt.start / duration * T, gt.end / duration * T
    flags, offs = [], []
    for lvl in range(levels):
        stride = 2 ** lvl
        for j in range(T >> lvl):
            c = (j + 0.5) * stride
            bs, be = (c - gs) / stride, (ge - c) / stride
            pos = gs <= c <= ge and max(bs, be) <= max_offset_units
            flags.append(pos)
            offs.append((bs, be) if pos else (0.0, 0.0))
    ta = TargetAssignment(np.array(flags, dtype=bool), np.array(offs, dtype=np.float64), None)
    return ta.resample(rng if rng is not None else np.random.default_rng(0))


# ---- scalar losses ----------------------------------------------------------


def focal_loss(c_hat: float, is_positive: bool, p: LossParams = LossParams()) -> float:
    c = min(max(float(c_hat), EPS), 1.0 - EPS)
    if is_positive:
        return -p.lambda_cls * p.alpha * (1.0 - c) ** p.gamma * math.log(c)
    return -p.lambda_cls * (1.0 - p.alpha) * c ** p.gamma * math.log(1.0 - c)


def regression_loss(pred: Sequence[float], target: Sequence[float], p: LossParams = LossParams()) -> float:
    return p.lambda_reg * (abs(target[0] - pred[0]) + abs(target[1] - pred[1]))


def contrastive_loss(sims: Sequence[float], p_index: int, p: LossParams = LossParams()) -> float:
    s = np.asarray(sims, dtype=np.float64)
    if not 0 <= p_index < s.size:
        raise IndexError(f"positive index {p_index} outside [0, {s.size})")
    sp = s[p_index]
    others = s[s < sp]
    if others.size == 0:
        return 0.0
    logits = np.concatenate([[sp], others]) / p.tau
    m = logits.max()
    lse = m + math.log(np.exp(logits - m).sum())
    return p.lambda_con * (lse - sp / p.tau)


# ---- tensor losses ----------------------------------------------------------


def _focal_t(c, pos, p):
    c = c.clamp(EPS, 1.0 - EPS)
    lp = -p.alpha * (1 - c) ** p.gamma * torch.log(c)
    ln = -(1 - p.alpha) * c ** p.gamma * torch.log(1 - c)
    return p.lambda_cls * torch.where(pos, lp, ln)


def loss_terms(cls_scores, offsets, sims, ta: TargetAssignment, p: LossParams):
    """Differentiable (cls, reg, con) terms for one clip."""
    pos = torch.as_tensor(ta.is_positive)
    cls = _focal_t(cls_scores, pos, p).mean()
    zero = cls_scores.new_zeros(())
    if ta.num_positive == 0:
        return cls, zero, zero
    target = torch.as_tensor(ta.offsets, dtype=DTYPE)
    reg = p.lambda_reg * (offsets[pos] - target[pos]).abs().sum(dim=1).mean()
    if ta.positive_index is None:
        return cls, reg, zero
    sp = sims[ta.positive_index]
    theta = sims.detach() < sp.detach()
    if not bool(theta.any()):
        return cls, reg, zero
    logits = torch.cat([sp[None], sims[theta]]) / p.tau
    con = p.lambda_con * (torch.logsumexp(logits, dim=0) - sp / p.tau)
    return cls, reg, con


@dataclass(frozen=True)
class LossBreakdown:
    total: float
    cls: float
    reg: float
    con: float
    no_positives: bool = False


def total_loss(trace: ForwardTrace, ta: TargetAssignment, p: LossParams = LossParams()) -> LossBreakdown:
    if trace.cls_scores is None:
        raise ValueError("trace has no head outputs")
    if ta.is_positive.shape[0] != trace.cls_scores.shape[0]:
        raise ValueError(
            f"assignment length {ta.is_positive.shape[0]} != pyramid length {trace.cls_scores.shape[0]}"
        )
    t = lambda a: torch.as_tensor(a, dtype=DTYPE)  # noqa: E731
    with torch.no_grad():
        cls, reg, con = loss_terms(t(trace.cls_scores), t(trace.offsets), t(trace.frame_sims), ta, p)
    no_pos = ta.num_positive == 0
    if no_pos:
        log.warning("no positive positions; regression and contrastive terms are zero")
    c, r, n = float(cls), float(reg), float(con)
    return LossBreakdown(c + r + n, c, r, n, no_pos)


# ---- batched objective over weight tensors ---------------------------------


@dataclass(frozen=True, eq=False)
class Example:
    features: FeatureSequence
    reg: RegToken
    targets: TargetAssignment


def _prepare(examples: Sequence[Example]):
    return [
        (torch.tensor(avg_pool_frames(e.features), dtype=DTYPE),
         torch.tensor(e.reg.values, dtype=DTYPE), e.targets)
        for e in examples
    ]


def objective(w, prepared, cfg: DecoderConfig, p: LossParams):
    """Mean total loss over prepared examples, as a differentiable scalar."""
    total = 0.0
    for pooled, reg, ta in prepared:
        out = forward_tensors(w, pooled, reg, cfg)
        cls, rg, con = loss_terms(out["cls_scores"], out["offsets"], out["frame_sims"], ta, p)
        total = total + cls + rg + con
    return total / len(prepared)


def analytic_gradients(weights: DecoderWeights, examples: Sequence[Example], p: LossParams):
    w = weights.as_torch(requires_grad=True)
    loss = objective(w, _prepare(examples), weights.cfg, p)
    grads = torch.autograd.grad(loss, list(w.values()))
    return float(loss.detach()), OrderedDict((k, g.numpy().copy()) for k, g in zip(w, grads))


def finite_difference_gradients(weights: DecoderWeights, examples: Sequence[Example],
                                p: LossParams, eps: float = 1e-5):
    """Central differences of the objective for every weight entry."""
    prepared = _prepare(examples)
    w = weights.as_torch()
    out = OrderedDict()
    with torch.no_grad():
        for name, tensor in w.items():
            flat = tensor.view(-1)
            g = np.empty(flat.numel())
            for i in range(flat.numel()):
                orig = float(flat[i])
                flat[i] = orig + eps
                up = float(objective(w, prepared, weights.cfg, p))
                flat[i] = orig - eps
                down = float(objective(w, prepared, weights.cfg, p))
                flat[i] = orig
                g[i] = (up - down) / (2 * eps)
            out[name] = g.reshape(tuple(tensor.shape))
    return out


def relative_error(a: np.ndarray, b: np.ndarray, atol: float = 1e-9) -> float:
    """||a - b|| / max(||a||, ||b||); 0 when both norms are below ``atol``."""
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if max(na, nb) < atol:
        return 0.0
    return float(np.linalg.norm(a - b) / max(na, nb))


def gradient_check_detail(weights: DecoderWeights, examples: Sequence[Example], p: LossParams = LossParams(),
                          eps: float = 1e-5, grad_transform: Optional[Callable] = None,
                          fd: Optional[dict] = None) -> dict:
    """Per-tensor relative error between autodiff gradients and central differences.

    ``grad_transform`` may rewrite the implementation gradients before the
    comparison (used to confirm that corrupted gradients are caught). ``fd``
    reuses finite differences computed earlier for the same weights.
    """
    _, grads = analytic_gradients(weights, examples, p)
    if grad_transform is not None:
        grads = grad_transform(grads)
    if fd is None:
        fd = finite_difference_gradients(weights, examples, p, eps)
    return OrderedDict((k, relative_error(grads[k], fd[k])) for k in grads)


def gradient_check(weights: DecoderWeights, examples: Sequence[Example], p: LossParams = LossParams(),
                   eps: float = 1e-5, grad_transform: Optional[Callable] = None) -> float:
    return max(gradient_check_detail(weights, examples, p, eps, grad_transform).values())


TINY_CONFIG = DecoderConfig(d_input=8, d_model=16, n_layers=1, n_heads=2, pyramid_levels=4, ffn_mult=2)


def tiny_fixture(seed: int = 42):
    """Weights + one synthetic example at T=8 for gradient checking."""
    from .synth import SynthSpec, make_dataset

    spec = SynthSpec(t=8, h=2, w=2, d=TINY_CONFIG.d_input, min_len=2, max_len=4)
    clip = make_dataset(seed, 1, spec)[0]
    weights = init_weights(TINY_CONFIG, seed)
    ta = assign_targets(clip.gt, clip.duration, spec.t, TINY_CONFIG.pyramid_levels,
                        rng=np.random.default_rng(seed))
    return weights, [Example(clip.features, clip.reg, ta)]


# ---- toy training -----------------------------------------------------------

TOY_CONFIG = DecoderConfig(d_input=8, d_model=32, n_layers=1, n_heads=4, pyramid_levels=4, ffn_mult=2)


@dataclass(eq=False)
class TrainResult:
    history: list
    weights: DecoderWeights
    cfg: DecoderConfig


def toy_examples(clips, cfg: DecoderConfig, rng) -> list[Example]:
    return [
        Example(c.features, c.reg,
                assign_targets(c.gt, c.duration, c.features.t, cfg.pyramid_levels, rng=rng))
        for c in clips
    ]


def train_toy(seed: int = 42, steps: int = 200, lr: float = 1e-2, n_clips: int = 32,
              cfg: DecoderConfig = TOY_CONFIG, p: LossParams = LossParams(),
              on_step: Optional[Callable[[int, float], None]] = None) -> TrainResult:
    """Full-batch gradient descent on a synthetic set; history[i] is the loss before step i."""
    from .synth import SynthSpec, make_dataset

    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    clips = make_dataset(seed, n_clips, SynthSpec(d=cfg.d_input), prefix="train")
    examples = toy_examples(clips, cfg, rng)
    w = init_weights(cfg, seed).as_torch(requires_grad=True)
    history = []
    for step in range(steps + 1):
        examples = [Example(e.features, e.reg, e.targets.resample(rng)) for e in examples]
        loss = objective(w, _prepare(examples), cfg, p)
        value = float(loss.detach())
        if not math.isfinite(value):
            raise TrainingError(step, f"loss is {value}")
        history.append(value)
        if on_step is not None:
            on_step(step, value)
        if step == steps:
            break
        grads = torch.autograd.grad(loss, list(w.values()))
        with torch.no_grad():
            for t, g in zip(w.values(), grads):
                t -= lr * g
            w["level_scales"].clamp_(min=1e-6)
    return TrainResult(history, DecoderWeights.from_torch(cfg, w), cfg)


def evaluate_toy(result: TrainResult, seed: int = 1042, n_clips: int = 8) -> list[float]:
    """Top-1 IoU of decoded candidates on held-out synthetic clips."""
    from .decoder import decode_candidates
    from .moments import interval_iou
    from .synth import SynthSpec, make_dataset

    clips = make_dataset(seed, n_clips, SynthSpec(d=result.cfg.d_input), prefix="heldout")
    ious = []
    for c in clips:
        trace = forward(c.features, c.reg, result.weights, result.cfg)
        top = decode_candidates(trace, c.duration, k=1)[0]
        ious.append(interval_iou(top, c.gt))
    return ious
