import json
import math
import os
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from momentloop.decoder import anchor_index, forward
from momentloop.training import (
    LossParams,
    TargetAssignment,
    TrainingError,
    assign_targets,
    contrastive_loss,
    finite_difference_gradients,
    focal_loss,
    gradient_check,
    gradient_check_detail,
    regression_loss,
    tiny_fixture,
    total_loss,
    train_toy,
)
from momentloop.types import Moment, MomentRangeError

from golden_fixtures import decoder_fixture, trace_checksum
from oracles import contrastive_oracle, focal_oracle


# ---- scalar losses against the high-precision oracle ----

def test_focal_example():
    assert focal_loss(0.9, True) == pytest.approx(0.004741, abs=5e-7)
    assert abs(focal_loss(0.9, True) - focal_oracle(0.9, True)) <= 1e-9


def test_focal_branch_ratio():
    assert focal_loss(0.5, True) / focal_loss(0.5, False) == pytest.approx(9.0, rel=1e-12)


def test_focal_limit_and_clamp():
    assert focal_loss(1.0, True) < 1e-20
    assert math.isfinite(focal_loss(0.0, True))
    assert math.isfinite(focal_loss(1.0, False))


@given(st.floats(1e-6, 1 - 1e-6), st.booleans())
def test_focal_matches_oracle(c, pos):
    assert abs(focal_loss(c, pos) - focal_oracle(c, pos)) <= 1e-9


@given(st.floats(1e-4, 1 - 1e-4), st.floats(1e-4, 1 - 1e-4))
def test_focal_monotone(a, b):
    if a == b:
        return
    lo, hi = sorted((a, b))
    assert focal_loss(lo, True) > focal_loss(hi, True)
    assert focal_loss(lo, False) < focal_loss(hi, False)


def test_regression_examples():
    assert regression_loss((1.5, 1.8), (1.0, 2.0)) == pytest.approx(0.7, abs=1e-12)
    assert regression_loss((1.0, 2.0), (1.0, 2.0)) == 0.0
    assert regression_loss((1.0, 2.0), (1.5, 1.8)) == regression_loss((1.5, 1.8), (1.0, 2.0))


def test_contrastive_examples():
    v = contrastive_loss([0.8, 0.6], 0)
    assert v == pytest.approx(0.002792, abs=5e-7)
    assert abs(v - contrastive_oracle([0.8, 0.6], 0)) <= 1e-9
    assert contrastive_loss([0.1, 0.5, 0.9], 0) == 0.0
    assert contrastive_loss([0.3], 0) == 0.0
    with pytest.raises(IndexError):
        contrastive_loss([0.3], 1)


sims_st = st.lists(st.floats(-1, 1), min_size=1, max_size=12)


@given(sims_st, st.data())
def test_contrastive_matches_oracle_and_nonnegative(sims, data):
    p = data.draw(st.integers(0, len(sims) - 1))
    v = contrastive_loss(sims, p)
    assert v >= 0.0
    assert abs(v - contrastive_oracle(sims, p)) <= 1e-9


def test_contrastive_shift_invariant():
    s = np.array([0.2, -0.4, 0.7, 0.1, 0.65])
    assert contrastive_loss(s + 0.25, 2) == pytest.approx(contrastive_loss(s, 2), abs=1e-12)


# ---- target assignment ----

def test_assign_targets_level0_example():
    ta = assign_targets(Moment(0.25, 0.75), 1.0, 8, 4)
    assert list(np.flatnonzero(ta.is_positive[:8])) == [2, 3, 4, 5]
    assert tuple(ta.offsets[2]) == (0.5, 3.5)
    assert ta.positive_index in set(np.flatnonzero(ta.is_positive))


def test_assign_targets_whole_clip_single_position_level():
    ta = assign_targets(Moment(0, 16), 16.0, 8, 4)
    top = len(ta.is_positive) - 1  # level 3 has one position centered at frame 4
    assert ta.is_positive[top]
    assert ta.offsets[top, 0] == ta.offsets[top, 1] == 0.5


def test_assign_targets_zero_length_gt_at_center():
    ta = assign_targets(Moment(2.5, 2.5), 8.0, 8, 4)
    idx = anchor_index(8, 4)
    centers = (idx[:, 1] + 0.5) * 2.0 ** idx[:, 0]
    np.testing.assert_array_equal(ta.is_positive, centers == 2.5)


def test_assign_targets_rejects_bad_gt():
    with pytest.raises(MomentRangeError):
        assign_targets(Moment(0, 11), 10.0, 8, 4)


def test_assign_targets_respects_offset_range():
    ta = assign_targets(Moment(0, 64), 64.0, 64, 4, max_offset_units=8)
    assert np.all(ta.offsets[ta.is_positive] <= 8)
    assert not ta.is_positive[:64].all()


# ---- total loss ----

def _perfect(T=8, levels=4):
    ta = assign_targets(Moment(2.0, 6.0), 8.0, T, levels)
    eps = 1e-12
    cls = np.where(ta.is_positive, 1 - eps, eps)
    off = np.where(ta.is_positive[:, None], ta.offsets, 1.0)
    sims = np.full(len(cls), -1.0)
    sims[ta.positive_index] = 1.0
    weights, cfg, clip, _ = decoder_fixture()
    tr = forward(clip.features, clip.reg, weights, cfg)
    return replace(tr, cls_scores=cls, offsets=off, frame_sims=sims), ta


def test_total_loss_at_optimum():
    tr, ta = _perfect()
    b = total_loss(tr, ta)
    assert b.total <= 1e-6
    assert min(b.cls, b.reg, b.con) >= 0 and not b.no_positives


def test_total_loss_decomposition_by_hand():
    tr, ta = _perfect()
    rng = np.random.default_rng(0)
    cls = rng.uniform(0.05, 0.95, size=len(ta.is_positive))
    off = rng.uniform(0.1, 3.0, size=(len(cls), 2))
    sims = rng.uniform(-1, 1, size=len(cls))
    tr = replace(tr, cls_scores=cls, offsets=off, frame_sims=sims)
    b = total_loss(tr, ta)
    pos = np.flatnonzero(ta.is_positive)
    want_cls = np.mean([focal_oracle(c, f) for c, f in zip(cls, ta.is_positive)])
    want_reg = np.mean([regression_loss(off[i], ta.offsets[i]) for i in pos])
    want_con = contrastive_oracle(sims, ta.positive_index)
    assert b.cls == pytest.approx(want_cls, abs=1e-12)
    assert b.reg == pytest.approx(want_reg, abs=1e-12)
    assert b.con == pytest.approx(want_con, abs=1e-12)
    assert b.total == pytest.approx(want_cls + want_reg + want_con, abs=1e-12)


def test_total_loss_no_positives_flag():
    tr, ta = _perfect()
    L = len(ta.is_positive)
    empty = TargetAssignment(np.zeros(L, bool), np.zeros((L, 2)), None)
    b = total_loss(tr, empty)
    assert b.no_positives and b.reg == 0 and b.con == 0


def test_total_loss_shape_mismatch():
    tr, _ = _perfect()
    with pytest.raises(ValueError):
        total_loss(tr, TargetAssignment(np.zeros(3, bool), np.zeros((3, 2)), None))


def test_golden_loss(golden_dir):
    with open(os.path.join(golden_dir, "decoder_trace.json")) as fh:
        golden = json.load(fh)
    weights, cfg, clip, ta = decoder_fixture()
    tr = forward(clip.features, clip.reg, weights, cfg)
    assert trace_checksum(tr) == golden["checksum"]
    b = total_loss(tr, ta)
    assert b.total == pytest.approx(golden["total_loss"], abs=1e-12)
    for key in ("cls", "reg", "con"):
        assert getattr(b, key) == pytest.approx(golden[key], abs=1e-12)


def test_loss_params_validation():
    with pytest.raises(ValueError):
        LossParams(tau=0)
    with pytest.raises(ValueError):
        LossParams.from_dict({"beta": 1})


# ---- gradients ----

@pytest.mark.slow
def test_gradient_check_and_mutation():
    weights, examples = tiny_fixture(42)
    assert gradient_check(weights, examples) <= 1e-6


@pytest.mark.slow
def test_gradient_mutations_detected_on_every_tensor():
    weights, examples = tiny_fixture(7)
    fd = finite_difference_gradients(weights, examples, LossParams())
    names = list(fd)

    def corrupt(name):
        def f(grads):
            grads = dict(grads)
            grads[name] = grads[name] * 1.01
            return grads
        return f

    for name in names:
        detail = gradient_check_detail(weights, examples, grad_transform=corrupt(name), fd=fd)
        if np.linalg.norm(fd[name]) < 1e-9:
            continue  # a zero gradient stays zero when scaled
        assert detail[name] > 1e-3, name


# ---- toy training ----

def test_train_zero_steps():
    r = train_toy(seed=3, steps=0, n_clips=2)
    assert len(r.history) == 1 and math.isfinite(r.history[0])


def test_train_deterministic():
    a = train_toy(seed=5, steps=3, n_clips=2)
    b = train_toy(seed=5, steps=3, n_clips=2)
    assert a.history == b.history
    for k in a.weights.names():
        assert a.weights[k].tobytes() == b.weights[k].tobytes()


def test_train_divergence_raises():
    with pytest.raises(TrainingError) as exc:
        train_toy(seed=1, steps=50, n_clips=2, lr=1e6)
    assert exc.value.step >= 1
