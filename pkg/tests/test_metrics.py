import json

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st
from scipy.special import expit, logit

from wlbayes import metrics as met

probs_and_labels = st.integers(2, 60).flatmap(
    lambda n: st.tuples(
        st.lists(st.floats(0, 1), min_size=n, max_size=n),
        st.lists(st.integers(0, 1), min_size=n, max_size=n),
    )
)


def test_confusion_examples():
    c = met.confusion([1, 1, 0, 0], [1, 0, 0, 1])
    assert (c.tp, c.fp, c.tn, c.fn) == (1, 1, 1, 1)
    c = met.confusion([0] * 100, [1] * 13 + [0] * 87)
    assert (c.tp, c.fn, c.tn, c.fp) == (0, 13, 87, 0)
    c = met.confusion([1, 2, 3, 3], [1, 2, 3, 3], labels=(1, 2, 3))
    assert np.count_nonzero(c.matrix - np.diag(np.diag(c.matrix))) == 0
    assert c.total == 4
    with pytest.raises(ValueError):
        met.confusion([0, 1], [0])


def test_threshold_metrics_hand_example():
    m = met.threshold_metrics(met.ConfusionCounts.from_counts(tp=3, fp=2, tn=4, fn=1))
    assert m["sensitivity"] == pytest.approx(0.75)
    assert m["specificity"] == pytest.approx(0.6667, abs=1e-4)
    assert m["ppv"] == pytest.approx(0.6)
    assert m["npv"] == pytest.approx(0.8)
    assert m["f1"] == pytest.approx(0.6667, abs=1e-4)
    assert m["p4"] == pytest.approx(4 / 5.75, abs=1e-12)
    assert round(m["p4"], 4) == 0.6957


def test_perfect_classifier():
    m = met.threshold_metrics(met.confusion([0, 1, 1, 0], [0, 1, 1, 0]))
    assert all(v == 1.0 for v in m.values())


def test_all_negative_predictions():
    m = met.threshold_metrics(met.confusion([0] * 10, [1] * 3 + [0] * 7))
    assert m["sensitivity"] == 0.0
    assert m["ppv"] is None
    assert m["p4"] is None and m["f1"] is None
    report = met.binary_report(np.full(10, 0.1), [1] * 3 + [0] * 7)
    assert report["p4"] is None
    assert "p4 undefined" in report.flags
    assert json.loads(report.to_json())["metrics"]["p4"] is None


@given(st.lists(st.floats(0.01, 1.0), min_size=2, max_size=4))
def test_harmonic_mean_bounds_and_symmetry(vals):
    h = met.harmonic_mean(vals)
    assert min(vals) - 1e-12 <= h <= max(vals) + 1e-12
    assert h == pytest.approx(met.harmonic_mean(vals[::-1]))


def test_auc_examples():
    assert met.auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == pytest.approx(0.75)
    assert met.auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert met.auc([0.3] * 6, [0, 1, 0, 1, 1, 0]) == 0.5
    assert met.auc([0.3, 0.4], [1, 1]) is None


def brute_force_auc(s, y):
    pos = [a for a, t in zip(s, y) if t == 1]
    neg = [a for a, t in zip(s, y) if t == 0]
    score = sum((p > n) + 0.5 * (p == n) for p in pos for n in neg)
    return score / (len(pos) * len(neg))


@given(probs_and_labels)
def test_auc_matches_pair_enumeration(pl):
    s, y = pl
    assume(0 < sum(y) < len(y))
    assert met.auc(s, y) == pytest.approx(brute_force_auc(s, y), abs=1e-12)


@given(probs_and_labels)
def test_auc_invariant_under_monotone_transform(pl):
    s, y = pl
    assume(0 < sum(y) < len(y))
    # a coarse grid keeps the transforms strictly increasing in floating point
    s = np.round(np.asarray(s), 3)
    for f in (lambda v: v**3, lambda v: np.exp(3 * v), lambda v: 2 * v - 7):
        assert met.auc(f(s), y) == met.auc(s, y)


def test_brier_examples():
    assert met.brier([1.0, 0.0], [1, 0]) == 0.0
    assert met.brier([0.5] * 4, [0, 1, 1, 1]) == 0.25
    assert met.balanced_brier([0.5] * 4, [0, 1, 1, 1]) == 0.25
    assert met.brier([0.9, 0.8, 0.2], [1, 1, 0]) == pytest.approx(0.03)
    assert met.balanced_brier([0.9, 0.8, 0.2], [1, 1, 0]) == pytest.approx(0.0325)
    assert met.balanced_brier([0.2, 0.3], [0, 0]) is None


@given(st.lists(st.floats(0, 1), min_size=2, max_size=40))
def test_brier_equals_balanced_brier_on_equal_counts(ps):
    n = len(ps) // 2 * 2
    y = [0, 1] * (n // 2)
    assert met.brier(ps[:n], y) == pytest.approx(met.balanced_brier(ps[:n], y), abs=1e-15)


def test_rps_examples():
    assert met.rps([[0, 0, 1.0]], [3])[0] == 0.0
    assert met.rps([[0.2, 0.5, 0.3]], [3])[0] == pytest.approx(0.53)
    assert met.rps([[0.2, 0.5, 0.3]], [3], normalize=True)[0] == pytest.approx(0.265)
    with pytest.raises(ValueError):
        met.rps([[0.2, 0.5, 0.4]], [3])


@given(probs_and_labels)
def test_rps_k2_equals_brier_exactly(pl):
    p, y = pl
    p, y = np.asarray(p), np.asarray(y)
    mean, per = met.rps(np.c_[1 - p, p], y + 1)
    np.testing.assert_array_equal(per, (p - y) ** 2)
    assert mean == met.brier(p, y)


def test_mean_calibration_examples():
    assert met.mean_calibration([0.2, 0.2, 0.2, 0.2, 0.2], [1, 0, 0, 0, 0]) == pytest.approx(0.0, abs=1e-15)
    assert met.mean_calibration([0.5] * 4, [0, 1, 0, 1]) == 0.0
    p = np.full(100, 0.37)
    y = np.array([1] * 13 + [0] * 87)
    assert met.mean_calibration(p, y) == pytest.approx((0.37 - 0.13) ** 2)
    assert met.mean_calibration(p, y, reduce="sum") == pytest.approx(2 * (0.37 - 0.13) ** 2)
    P = np.array([[0.2, 0.5, 0.3]] * 10)
    y3 = np.array([1, 1, 2, 2, 2, 2, 2, 3, 3, 3])
    assert met.mean_calibration(P, y3) == pytest.approx(0.0, abs=1e-15)


def test_weak_calibration_recovers_identity():
    rng = np.random.default_rng(1)
    p = rng.uniform(0.02, 0.98, 100_000)
    y = (rng.random(p.size) < p).astype(int)
    fit = met.weak_calibration(p, y)
    assert fit.converged
    assert abs(fit.intercept) < 0.05 and abs(fit.slope - 1) < 0.05


def test_weak_calibration_detects_overconfidence():
    rng = np.random.default_rng(2)
    p_true = rng.uniform(0.05, 0.95, 100_000)
    y = (rng.random(p_true.size) < p_true).astype(int)
    fit = met.weak_calibration(expit(2 * logit(p_true)), y)
    assert fit.slope == pytest.approx(0.5, abs=0.03)


def test_weak_calibration_degenerate_inputs():
    fit = met.weak_calibration([0.0, 0.0, 1e-9, 0.0], [0, 1, 0, 1])
    assert fit.flag.startswith("degenerate") and fit.slope is None
    fit = met.weak_calibration([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1])
    assert fit.flag.startswith("separation")
    with pytest.raises(met.CalibrationError, match="did not converge"):
        met.weak_calibration([0.1, 0.6, 0.4, 0.9, 0.5], [0, 0, 1, 1, 1], max_iter=1)


@given(st.integers(1, 50), st.integers(0, 50), st.integers(0, 50))
def test_balanced_accuracy_equals_accuracy_on_balanced_data(n, tp, tn):
    tp, tn = min(tp, n), min(tn, n)
    c = met.ConfusionCounts.from_counts(tp=tp, fn=n - tp, tn=tn, fp=n - tn)
    m = met.threshold_metrics(c)
    assert m["balanced_accuracy"] == pytest.approx(m["accuracy"])


def test_collapse_examples():
    P = np.array([[0.2, 0.5, 0.3]])
    rep = met.adjacent_binary_collapse(P, [3], split=2)
    assert rep.collapse["name"] == "{1,2} vs 3"
    assert rep.confusion.total == 1
    rep1 = met.adjacent_binary_collapse(np.tile(P, (3, 1)), [1, 2, 3], split=1)
    assert rep1.collapse["name"] == "1 vs {2,3}"
    assert rep1.confusion.tn + rep1.confusion.fp == 1
    with pytest.raises(ValueError):
        met.adjacent_binary_collapse(P, [3], split=3)


def test_collapsed_auc_equals_binary_auc(rng):
    P = rng.dirichlet([1, 1, 1], size=200)
    y = rng.integers(1, 4, 200)
    for k in (1, 2):
        rep = met.adjacent_binary_collapse(P, y, split=k)
        assert rep["auc"] == met.auc(P[:, k:].sum(axis=1), (y > k).astype(int))


def test_ordinal_report_keys(rng):
    P = rng.dirichlet([2, 2, 2], size=50)
    y = rng.integers(1, 4, 50)
    pred = np.argmax(P, axis=1) + 1
    rep = met.ordinal_report(P, y, pred)
    assert set(rep.values) == set(met.ORDINAL_KEYS)
    assert set(rep.collapses) == {"1 vs {2,3}", "{1,2} vs 3"}
    recall = [np.mean(pred[y == c] == c) for c in (1, 2, 3)]
    assert rep["balanced_accuracy"] == pytest.approx(np.mean(recall))
    assert rep["accuracy"] == pytest.approx(np.mean(pred == y))
    # collapse of {1,2} vs 3: sensitivity is recall of category 3 against {1,2}
    sens = np.mean(pred[y == 3] == 3)
    assert rep.collapses["{1,2} vs 3"]["sensitivity"] == pytest.approx(sens)


def test_binary_report_roundtrip(rng):
    p = rng.uniform(size=80)
    y = (rng.random(80) < p).astype(int)
    rep = met.binary_report(p, y)
    assert set(rep.values) == set(met.BINARY_KEYS)
    back = met.MetricsReport.from_dict(json.loads(rep.to_json()))
    assert back.values == pytest.approx(rep.values)
    assert np.array_equal(back.confusion.matrix, rep.confusion.matrix)


def test_metrics_order_invariant(rng):
    p = rng.uniform(size=60)
    y = (rng.random(60) < p).astype(int)
    perm = rng.permutation(60)
    a = met.binary_report(p, y).values
    b = met.binary_report(p[perm], y[perm]).values
    assert a == pytest.approx(b, rel=1e-12)


def test_comparison_table_marks_better_values(rng):
    y = np.array([0] * 8 + [1] * 2)
    a = met.binary_report(np.r_[np.full(8, 0.1), np.full(2, 0.3)], y)
    b = met.binary_report(np.r_[np.full(8, 0.3), np.full(2, 0.7)], y)
    table = met.comparison_table(a, b)
    sens = next(line for line in table.splitlines() if line.startswith("sensitivity"))
    assert sens.split()[1:] == ["0.000", "1.000*"]
    same = met.comparison_table(a, a)
    assert "*" not in same
