import numpy as np
import pytest
from hypothesis import given, strategies as st

from convshare.evalkit import (
    PRF, MatchResult, emit_table, evaluate, f_score, iou, match_detections, prf_from_counts, prf_metrics,
    relative_gain,
)
from convshare.tensorcore import DetectionBox
from oracles import replay_greedy_match

box_st = st.builds(
    DetectionBox,
    x=st.integers(0, 6).map(float), y=st.integers(0, 6).map(float),
    w=st.integers(1, 4).map(float), h=st.integers(1, 4).map(float),
    confidence=st.sampled_from([0.3, 0.6, 0.9, 1.0]),
)


def test_iou_examples():
    a = DetectionBox(0, 0, 2, 2)
    assert iou(a, a) == 1.0
    assert iou(a, DetectionBox(5, 5, 1, 1)) == 0.0
    assert iou(a, DetectionBox(1, 0, 2, 2)) == pytest.approx(2 / 6)


@given(a=box_st, b=box_st)
def test_iou_symmetric_bounded(a, b):
    assert iou(a, b) == iou(b, a)
    assert 0.0 <= iou(a, b) <= 1.0
    assert iou(a, a) == 1.0


def test_match_examples():
    gts = [DetectionBox(0, 0, 2, 2), DetectionBox(5, 5, 2, 2)]
    r = match_detections(list(gts), gts, 0.5)
    assert (r.true_positives, r.false_positives, r.false_negatives) == (2, 0, 0)
    r = match_detections([], gts)
    assert r.false_negatives == 2 and r.true_positives == 0
    with pytest.raises(ValueError):
        match_detections([], gts, 0.0)


def test_match_prefers_confident_detection():
    gt = [DetectionBox(0, 0, 4, 4)]
    weak_exact = DetectionBox(0, 0, 4, 4, 0.5)
    strong_off = DetectionBox(1, 0, 4, 4, 0.9)
    r = match_detections([weak_exact, strong_off], gt, 0.5)
    assert r.pairs[0][:2] == (1, 0) and r.false_positives == 1


@given(dets=st.lists(box_st, max_size=4), gts=st.lists(box_st, max_size=4), tau=st.sampled_from([0.1, 0.3, 0.5]))
def test_match_counts_and_oracle(dets, gts, tau):
    r = match_detections(dets, gts, tau)
    assert r.true_positives == len(r.pairs)
    assert r.true_positives + r.false_negatives == len(gts)
    assert r.true_positives + r.false_positives == len(dets)
    assert [(d, g) for d, g, _ in r.pairs] == replay_greedy_match(dets, gts, tau)


def test_match_against_replay_on_many_random_cases():
    rng = np.random.default_rng(12)
    for _ in range(300):
        mk = lambda: DetectionBox(float(rng.integers(0, 5)), float(rng.integers(0, 5)), float(rng.integers(1, 4)),
                                  float(rng.integers(1, 4)), float(rng.choice([0.5, 0.8, 1.0])))
        dets = [mk() for _ in range(rng.integers(0, 4))]
        gts = [mk() for _ in range(rng.integers(0, 4))]
        got = [(d, g) for d, g, _ in match_detections(dets, gts, 0.5).pairs]
        assert got == replay_greedy_match(dets, gts, 0.5)


def test_prf_examples():
    assert f_score(21.11, 21.93) == pytest.approx(21.51, abs=0.01)
    assert prf_from_counts(5, 0, 0) == PRF(100.0, 100.0, 100.0)
    p = prf_metrics([MatchResult(1, 1, 3)])
    assert (p.precision, p.recall) == (50.0, 25.0) and p.f_score == pytest.approx(33.33, abs=0.01)
    assert prf_from_counts(0, 0, 0) == PRF(0.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        prf_metrics([])


@given(st.lists(st.tuples(st.integers(0, 5), st.integers(0, 5), st.integers(0, 5)), min_size=1, max_size=6))
def test_prf_micro_average_order_invariant(counts):
    results = [MatchResult(*c) for c in counts]
    assert prf_metrics(results) == prf_metrics(reversed(results))
    p = prf_metrics(results)
    if p.precision + p.recall:
        assert p.f_score == pytest.approx(2 * p.precision * p.recall / (p.precision + p.recall))


def test_relative_gain_examples():
    assert relative_gain(24.03, 21.11) == pytest.approx(13.83, abs=0.01)
    assert relative_gain(26.81, 21.11) == pytest.approx(27.00, abs=0.01)
    assert relative_gain(7.5, 7.5) == 0.0
    with pytest.raises(ValueError):
        relative_gain(1.0, 0.0)


@given(base=st.floats(0.1, 100), a=st.floats(0, 100), b=st.floats(0, 100))
def test_relative_gain_increasing(base, a, b):
    if a < b:
        assert relative_gain(a, base) < relative_gain(b, base)


def test_emit_table_layout():
    base = PRF(21.11, 21.93, 21.51)
    only = emit_table(base)
    assert only.splitlines() == ["metric,baseline", "Precision,21.11", "Recall,21.93", "F-score,21.51"]
    table = emit_table(base, {"C_l=1": PRF(26.81, 25.36, 26.06)}).splitlines()
    assert table[0] == "metric,baseline,C_l=1" and len(table) == 7
    assert table[4] == "Precision (Gain),,27.00"
    assert table[5] == "Recall (Gain),,15.64"


def test_evaluate_frames_by_key():
    gt = {0: [DetectionBox(0, 0, 2, 2)], 1: [DetectionBox(4, 4, 2, 2)]}
    dets = {0: [DetectionBox(0, 0, 2, 2)], 2: [DetectionBox(9, 9, 1, 1)]}
    p = evaluate(dets, gt)
    assert (p.precision, p.recall) == (50.0, 50.0)
