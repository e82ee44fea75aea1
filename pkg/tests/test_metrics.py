import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from concatnet.metrics import (ClassMetrics, MetricsError, OvrCounts, build_report, class_metrics,
                               confusion_matrix, macro_average, multiclass_roc, ovr_counts, render_csv,
                               reports_to_json, roc_curve, round_half_up)

from oracles import PUBLISHED_METRICS, confusion_by_pairs, exact_rates, ovr_by_enumeration, pairwise_auc


def _row(acc, prec, rec, f1, spec=0.0):
    return ClassMetrics(acc, prec, rec, spec, f1)


# ----------------------------------------------------------- confusion matrix

def test_confusion_small():
    cm = confusion_matrix([0, 1, 2, 0], [0, 1, 1, 0], 3)
    assert cm.counts.tolist() == [[2, 0, 0], [0, 1, 0], [0, 1, 0]]


def test_confusion_perfect():
    y = [0, 2, 2, 1, 0, 2]
    cm = confusion_matrix(y, y, 3)
    assert cm.counts.tolist() == np.diag([2, 1, 3]).tolist()


def test_confusion_matches_pair_counting():
    rng = np.random.default_rng(7)
    t, p = rng.integers(0, 3, 200), rng.integers(0, 3, 200)
    assert confusion_matrix(t, p, 3).counts.tolist() == confusion_by_pairs(t.tolist(), p.tolist(), 3)


@pytest.mark.parametrize("t,p", [([0, 1], [0]), ([0, 3], [0, 1]), ([-1], [0]), ([], [])])
def test_confusion_errors(t, p):
    with pytest.raises(MetricsError):
        confusion_matrix(t, p, 3)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3)), min_size=1, max_size=60))
def test_confusion_sums(pairs):
    t, p = zip(*pairs)
    cm = confusion_matrix(t, p, 4)
    assert cm.total == len(pairs)
    assert cm.counts.sum(axis=1).tolist() == np.bincount(t, minlength=4).tolist()
    assert cm.counts.sum(axis=0).tolist() == np.bincount(p, minlength=4).tolist()


# ----------------------------------------------------------------- OvR counts

def test_ovr_example():
    cm = confusion_matrix([0, 1, 2, 0], [0, 1, 1, 0], 3)
    assert ovr_counts(cm, 1) == OvrCounts(tp=1, fp=1, tn=2, fn=0)


def test_ovr_diagonal():
    cm = confusion_matrix([0, 1, 2, 2], [0, 1, 2, 2], 3)
    for c in range(3):
        oc = ovr_counts(cm, c)
        assert oc.fp == oc.fn == 0


def test_ovr_total_and_enumeration():
    rng = np.random.default_rng(3)
    t, p = rng.integers(0, 3, 100), rng.integers(0, 3, 100)
    cm = confusion_matrix(t, p, 3)
    for c in range(3):
        oc = ovr_counts(cm, c)
        assert oc.total == 100
        assert (oc.tp, oc.fp, oc.tn, oc.fn) == ovr_by_enumeration(t.tolist(), p.tolist(), c)


def test_ovr_bad_class():
    cm = confusion_matrix([0, 1], [0, 1], 2)
    with pytest.raises(MetricsError):
        ovr_counts(cm, 2)


# --------------------------------------------------------------- class rates

def test_f1_proposed_normal_row():
    m = class_metrics(OvrCounts(tp=92, fp=8, tn=26, fn=0))
    assert m.precision == pytest.approx(0.92) and m.recall == 1.0
    assert m.f1 == pytest.approx(2 * 0.92 / 1.92)
    assert round_half_up(m.f1) == 0.96


def test_zero_denominator_policy():
    m = class_metrics(OvrCounts(tp=0, fp=0, tn=5, fn=5))
    assert m.precision == 0.0 and "precision" in m.degenerate_flags
    assert m.recall == 0.0 and m.specificity == 1.0
    assert "recall" not in m.degenerate_flags


def test_class_metrics_match_exact_fractions():
    rng = np.random.default_rng(11)
    for _ in range(50):
        tp, fp, tn, fn = (int(v) for v in rng.integers(0, 20, 4))
        if tp + fp + tn + fn == 0:
            continue
        m = class_metrics(OvrCounts(tp, fp, tn, fn))
        for k, v in exact_rates(tp, fp, tn, fn).items():
            assert abs(getattr(m, k) - float(v)) <= 1e-12


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 50), st.integers(0, 50), st.integers(0, 50), st.integers(0, 50))
def test_f1_between_precision_and_recall(tp, fp, tn, fn):
    m = class_metrics(OvrCounts(tp, fp, tn, fn))
    assert min(m.precision, m.recall) - 1e-12 <= m.f1 <= max(m.precision, m.recall) + 1e-12


def test_class_metrics_empty():
    with pytest.raises(MetricsError):
        class_metrics(OvrCounts(0, 0, 0, 0))


# ------------------------------------------------------------- macro average

def test_macro_average_convnext_rows():
    rows = [_row(*v) for v in PUBLISHED_METRICS["ConvNeXt"]["rows"].values()]
    avg = macro_average(rows)
    got = [round_half_up(getattr(avg, k)) for k in ("accuracy", "precision", "recall", "f1")]
    assert got == [0.87, 0.88, 0.87, 0.87]


def test_macro_average_proposed_precision():
    rows = [_row(*v) for v in PUBLISHED_METRICS["Proposed"]["rows"].values()]
    avg = macro_average(rows)
    assert avg.precision == pytest.approx(0.97333333, abs=1e-8)
    assert round_half_up(avg.precision) == 0.97


def test_macro_average_identical_and_flags():
    r = ClassMetrics(0.5, 0.25, 0.75, 0.6, 0.375, frozenset({"precision"}))
    avg = macro_average([r, r, ClassMetrics(0.5, 0.25, 0.75, 0.6, 0.375, frozenset({"f1"}))])
    assert avg.accuracy == 0.5 and avg.f1 == 0.375
    assert avg.degenerate_flags == {"precision", "f1"}
    with pytest.raises(MetricsError):
        macro_average([])


def test_round_half_up():
    assert round_half_up(0.875) == 0.88
    assert round_half_up(0.125) == 0.13
    assert round_half_up(0.9733333) == 0.97


# ----------------------------------------------------------------------- ROC

def test_roc_perfect():
    r = roc_curve([1, 1, 0, 0], [0.9, 0.8, 0.1, 0.2])
    assert r.auc == 1.0


def test_roc_constant_scores():
    r = roc_curve([1, 0, 1, 0, 0], [0.3] * 5)
    assert r.auc == 0.5
    assert r.points == [(0.0, 0.0), (1.0, 1.0)]


def test_roc_hand_example():
    # pairs: 0.8 beats both negatives, 0.6 beats only 0.2 -> 3 wins of 4
    y, s = [1, 0, 1, 0], [0.8, 0.7, 0.6, 0.2]
    assert pairwise_auc(y, s) == 0.75
    r = roc_curve(y, s)
    assert r.auc == 0.75
    assert r.points == [(0, 0), (0, 0.5), (0.5, 0.5), (0.5, 1), (1, 1)]
    assert r.thresholds[0] > 0.8 and r.thresholds[1:].tolist() == [0.8, 0.7, 0.6, 0.2]


def test_roc_single_class_error():
    with pytest.raises(MetricsError):
        roc_curve([1, 1, 1], [0.1, 0.2, 0.3])
    with pytest.raises(MetricsError):
        roc_curve([1, 0], [0.1])


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 6)), min_size=2, max_size=40))
def test_roc_auc_equals_pairwise(pairs):
    y, s = zip(*pairs)
    if len(set(y)) < 2:
        return
    s = [v / 6 for v in s]
    r = roc_curve(y, s)
    assert abs(r.auc - pairwise_auc(y, s)) <= 1e-12
    assert r.points[0] == (0.0, 0.0) and r.points[-1] == (1.0, 1.0)
    assert np.all(np.diff(r.fpr) >= 0) and np.all(np.diff(r.tpr) >= 0)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10_000))
def test_roc_negated_scores_complement(seed):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, 30)
    if len(set(y.tolist())) < 2:
        return
    s = rng.permutation(30).astype(float)  # no ties
    assert roc_curve(y, s).auc + roc_curve(y, -s).auc == pytest.approx(1.0, abs=1e-12)


def test_multiclass_roc_perfect_and_uniform():
    y = [0, 1, 2, 0, 1, 2]
    onehot = np.eye(3)[y]
    assert all(r.auc == 1.0 for r in multiclass_roc(y, onehot).curves.values())
    uni = multiclass_roc(y, np.full((6, 3), 1 / 3))
    assert [r.auc for r in uni.curves.values()] == [0.5, 0.5, 0.5] and uni.macro_auc == 0.5


def test_multiclass_roc_fixture_pairwise():
    y = [0, 0, 0, 1, 1, 1, 2, 2, 2]
    probs = np.array([
        [0.7, 0.2, 0.1], [0.4, 0.4, 0.2], [0.3, 0.3, 0.4],
        [0.2, 0.6, 0.2], [0.5, 0.3, 0.2], [0.1, 0.8, 0.1],
        [0.2, 0.2, 0.6], [0.3, 0.4, 0.3], [0.1, 0.1, 0.8],
    ])
    roc = multiclass_roc(y, probs)
    for c in range(3):
        yc = [int(v == c) for v in y]
        assert roc.curves[c].auc == pytest.approx(pairwise_auc(yc, probs[:, c].tolist()), abs=1e-12)
    assert roc.macro_auc == pytest.approx(np.mean([roc.curves[c].auc for c in range(3)]))


def test_multiclass_roc_absent_class_omitted():
    roc = multiclass_roc([0, 1, 0, 1], np.full((4, 3), 1 / 3))
    assert set(roc.curves) == {0, 1}
    assert len(roc.warnings) == 1 and "class 2" in roc.warnings[0]


# -------------------------------------------------------------------- report

def test_report_perfect():
    y = [0, 1, 2, 2, 1, 0]
    rep = build_report(y, y, np.eye(3)[y], ["Normal", "Liver", "Aspergillosis"])
    csv_text = render_csv({"M": rep})
    lines = csv_text.strip().splitlines()
    assert lines[0] == "AI Models,Types,Accuracy,Precision,Recall,F1-Score"
    assert len(lines) == 5
    for line in lines[1:]:
        assert line.split(",")[2:] == ["1.00"] * 4
    assert (rep.confusion.counts == np.diag([2, 2, 2])).all()


def test_report_random_fixture_against_oracles():
    rng = np.random.default_rng(21)
    y = rng.integers(0, 3, 126)
    probs = rng.dirichlet(np.ones(3), size=126)
    pred = probs.argmax(axis=1)
    rep = build_report(y, pred, probs, ["a", "b", "c"])
    for c in range(3):
        exact = exact_rates(*ovr_by_enumeration(y.tolist(), pred.tolist(), c))
        for k, v in exact.items():
            assert abs(getattr(rep.rows[c], k) - float(v)) <= 1e-12
        assert rep.aucs[c] == pytest.approx(pairwise_auc((y == c).astype(int).tolist(), probs[:, c].tolist()),
                                            abs=1e-12)
    for k in ("accuracy", "precision", "recall", "specificity", "f1"):
        assert getattr(rep.average, k) == pytest.approx(np.mean([getattr(r, k) for r in rep.rows]))
    assert rep.overall_accuracy == pytest.approx((y == pred).mean())
    d = json.loads(reports_to_json({"M": rep}))["models"]["M"]
    assert d["confusion_matrix"] == confusion_by_pairs(y.tolist(), pred.tolist(), 3)


def test_balanced_accuracy_equals_mean_recall():
    y = np.repeat([0, 1, 2], 20)
    pred = np.random.default_rng(2).integers(0, 3, 60)
    rep = build_report(y, pred, np.eye(3)[pred], ["a", "b", "c"])
    assert rep.overall_accuracy == pytest.approx(np.mean([r.recall for r in rep.rows]), abs=1e-12)
