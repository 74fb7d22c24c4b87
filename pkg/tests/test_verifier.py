import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from momentloop.moments import interval_iou
from momentloop.types import Moment
from momentloop.verifier import (
    VerifierError,
    assign_verifier_label,
    layout_segment_tokens,
    sample_frames,
    score_candidate,
    select_best,
    zoom_in,
)


@pytest.mark.parametrize(
    "m, dur, want",
    [((10, 20), 60, (5, 25)), ((2, 6), 100, (0, 8)), ((0, 60), 60, (0, 60)), ((50, 58), 60, (46, 60))],
)
def test_zoom_in_examples(m, dur, want):
    z = zoom_in(Moment(*m), dur)
    assert (z.start, z.end) == want


def test_zoom_in_errors():
    with pytest.raises(VerifierError):
        zoom_in(Moment(5, 5), 10)
    with pytest.raises(VerifierError):
        zoom_in(Moment(5, 12), 10)


interval = st.tuples(st.floats(0, 99), st.floats(0.01, 100)).map(lambda t: (t[0], min(100.0, t[0] + t[1])))


@given(interval)
def test_zoom_in_never_shrinks(se):
    m = Moment(*se)
    z = zoom_in(m, 100.0)
    assert z.start <= m.start and z.end >= m.end
    full = (z.start, z.end) == (0.0, 100.0)
    assert (zoom_in(z, 100.0) == z) == full


def test_layout_example():
    frames = list(range(5, 26, 2))
    lay = layout_segment_tokens(Moment(10, 20), frames)
    assert lay.start_insert_index == 3 and frames[3] == 11
    assert lay.end_insert_index == 8 and frames[7] == 19
    assert not lay.empty


def test_layout_full_cover_and_ties():
    frames = [1.0, 2.0, 3.0]
    lay = layout_segment_tokens(Moment(0, 5), frames)
    assert (lay.start_insert_index, lay.end_insert_index) == (0, 3)
    lay = layout_segment_tokens(Moment(2.0, 3.0), frames)
    assert (lay.start_insert_index, lay.end_insert_index) == (1, 3)


def test_layout_empty_span():
    lay = layout_segment_tokens(Moment(1.2, 1.8), [1.0, 2.0, 3.0])
    assert lay.empty and lay.start_insert_index == lay.end_insert_index == 1
    with pytest.raises(VerifierError):
        layout_segment_tokens(Moment(0, 1), [2.0, 1.0])


@given(interval, st.integers(1, 40))
def test_layout_index_bounds(se, n):
    frames = sample_frames(zoom_in(Moment(*se), 100.0), n)
    lay = layout_segment_tokens(Moment(*se), frames)
    assert 0 <= lay.start_insert_index <= lay.end_insert_index <= len(frames)


def test_sample_frames():
    assert sample_frames(Moment(0, 10), 5) == (1.0, 3.0, 5.0, 7.0, 9.0)
    with pytest.raises(ValueError):
        sample_frames(Moment(0, 1), 0)


def test_score_candidate_examples():
    assert score_candidate(0.3, 0.3).score == 0.5
    assert score_candidate(2.0, 0.0).score == pytest.approx(0.880797, abs=5e-7)
    assert score_candidate(-1.0, -3.0).score == pytest.approx(1 / (1 + math.exp(-2)), abs=1e-12)
    assert score_candidate(-800.0, 0.0).score >= 0.0
    with pytest.raises(VerifierError):
        score_candidate(float("nan"), 0.0)


@given(st.floats(-30, 30), st.floats(-30, 30))
def test_score_antisymmetric(a, b):
    assert score_candidate(a, b).score + score_candidate(b, a).score == pytest.approx(1.0, abs=1e-12)


def test_select_best_examples():
    cands = [Moment(0, 1), Moment(1, 2), Moment(2, 3)]
    sc = [score_candidate(0, 0, i) for i in range(3)]
    assert select_best(sc, cands) == (cands[0], 0)
    sc = [score_candidate(l, 0, i) for i, l in enumerate([-0.85, 2.2, 0.0])]
    assert select_best(sc, cands)[1] == 1
    assert select_best(sc[:1], cands[:1]) == (cands[0], 0)
    with pytest.raises(VerifierError):
        select_best([], [])
    with pytest.raises(VerifierError):
        select_best(sc[:2], cands)


def test_assign_label():
    gt = Moment(0, 10)
    assert assign_verifier_label(Moment(0, 6), gt)      # IoU 0.6
    assert assign_verifier_label(Moment(0, 5), gt)      # IoU exactly 0.5
    assert not assign_verifier_label(Moment(20, 30), gt)


def _logit(p):
    p = min(max(p, 1e-12), 1 - 1e-12)
    return math.log(p / (1 - p))


def test_oracle_scores_dominate_first_candidate():
    rng = np.random.default_rng(17)
    sel, first, strict = [], [], 0
    for _ in range(500):
        gs = rng.uniform(0, 80)
        gt = Moment(gs, gs + rng.uniform(2, 20))
        n = int(rng.integers(1, 6))
        cands = []
        for _ in range(n):
            s = rng.uniform(0, 90)
            cands.append(Moment(s, s + rng.uniform(1, 10)))
        ious = [interval_iou(c, gt) for c in cands]
        scores = [score_candidate(_logit(v), 0.0, i) for i, v in enumerate(ious)]
        best, _ = select_best(scores, cands)
        sel.append(interval_iou(best, gt))
        first.append(ious[0])
        assert sel[-1] >= first[-1]
        strict += sel[-1] > first[-1]
    assert np.mean(sel) >= np.mean(first)
    assert strict >= 1
