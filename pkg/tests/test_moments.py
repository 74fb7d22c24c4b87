from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from momentloop.moments import interval_iop, interval_iou, nms, rank_moments, top_k
from momentloop.types import Moment

from oracles import iop_exact, iou_exact, nms_oracle, nms_subset_oracle


def M(s, e, score=None):
    return Moment(s, e, score)


@pytest.mark.parametrize(
    "a, b, expected",
    [((5, 15), (10, 20), 1 / 3), ((3, 7), (3, 7), 1.0), ((0, 1), (2, 3), 0.0),
     ((0, 1), (1, 2), 0.0), ((4, 4), (4, 4), 1.0), ((4, 4), (0, 10), 0.0)],
)
def test_interval_iou(a, b, expected):
    assert interval_iou(M(*a), M(*b)) == pytest.approx(expected, abs=1e-15)


@pytest.mark.parametrize(
    "pred, gt, expected",
    [((5, 15), (10, 30), 0.5), ((12, 14), (10, 30), 1.0), ((0, 5), (10, 30), 0.0),
     ((12, 12), (10, 30), 1.0), ((5, 5), (10, 30), 0.0)],
)
def test_interval_iop(pred, gt, expected):
    assert interval_iop(M(*pred), M(*gt)) == expected


interval = st.tuples(st.integers(0, 50), st.integers(0, 20)).map(lambda t: (t[0], t[0] + t[1]))


@given(interval, interval)
def test_iou_matches_exact_and_is_symmetric(a, b):
    v = interval_iou(M(*a), M(*b))
    assert 0.0 <= v <= 1.0
    assert v == interval_iou(M(*b), M(*a))
    assert v == pytest.approx(float(iou_exact(a, b)), abs=1e-15)
    assert interval_iou(M(*a), M(*a)) == 1.0


@given(interval, interval)
def test_iop_matches_exact(p, g):
    v = interval_iop(M(*p), M(*g))
    assert 0.0 <= v <= 1.0
    assert v == pytest.approx(float(iop_exact(p, g)), abs=1e-15)


def test_nms_example():
    cands = [M(0, 10, 0.9), M(1, 10, 0.8), M(20, 30, 0.7)]
    kept = nms(cands, 0.75)
    assert kept == [M(0, 10, 0.9), M(20, 30, 0.7)]
    raw = [(m.start, m.end, m.score) for m in cands]
    assert nms_subset_oracle(raw, 0.75) == [0, 2]


def test_nms_trivial_cases():
    assert nms([M(1, 2, 0.3)]) == [M(1, 2, 0.3)]
    cands = [M(0, 10, 0.9), M(1, 10, 0.8), M(0, 9, 0.7)]
    assert nms(cands, 1.0) == cands
    assert nms([]) == []
    with pytest.raises(ValueError):
        nms([M(0, 1)])


def test_nms_keeps_pairs_exactly_at_threshold():
    # IoU([0,4],[1,4]) = 3/4 exactly
    cands = [M(0, 4, 0.9), M(1, 4, 0.8)]
    assert nms(cands, 0.75) == cands


def test_nms_tie_break_by_start_then_index():
    cands = [M(5, 6, 0.5), M(1, 2, 0.5), M(1, 2, 0.5)]
    kept = nms(cands, 0.75)
    assert kept == [M(1, 2, 0.5), M(5, 6, 0.5)]


def _random_instance(rng):
    n = int(rng.integers(1, 13))
    starts = rng.integers(0, 20, size=n)
    lens = rng.integers(0, 10, size=n)
    scores = rng.choice([0.1, 0.3, 0.5, 0.7, 0.9], size=n)
    return [(int(s), int(s + l), float(c)) for s, l, c in zip(starts, lens, scores)]


def test_nms_matches_subset_enumeration_small():
    rng = np.random.default_rng(3)
    for _ in range(150):
        raw = _random_instance(rng)[:7]
        kept = nms([M(*c) for c in raw], 0.75)
        assert kept == [M(*raw[i]) for i in nms_subset_oracle(raw, 0.75)]


@given(st.lists(st.tuples(interval, st.sampled_from([0.2, 0.4, 0.6, 0.8])), max_size=12),
       st.sampled_from([0.0, 0.3, 0.5, 0.75, 1.0]))
def test_nms_properties(items, thr):
    cands = [M(a, b, s) for (a, b), s in items]
    kept = nms(cands, thr)
    scores = [k.score for k in kept]
    assert scores == sorted(scores, reverse=True)
    for i in range(len(kept)):
        for j in range(i + 1, len(kept)):
            assert interval_iou(kept[i], kept[j]) <= thr
    raw = [(m.start, m.end, m.score) for m in cands]
    assert kept == [cands[i] for i in nms_oracle(raw, thr)]


def test_top_k():
    cands = [M(i, i + 1, 0.9 - 0.1 * i) for i in range(7)]
    assert top_k(cands, 5) == cands[:5]
    assert top_k(cands, 0) == []
    assert top_k(cands[:3], 5) == cands[:3]
    with pytest.raises(ValueError):
        top_k(cands, -1)


def test_rank_moments_order():
    cands = [M(3, 4, 0.5), M(1, 2, 0.9), M(0, 1, 0.5)]
    assert rank_moments(cands) == [M(1, 2, 0.9), M(0, 1, 0.5), M(3, 4, 0.5)]


def test_exact_iou_fraction_sanity():
    assert iou_exact((5, 15), (10, 20)) == Fraction(1, 3)
