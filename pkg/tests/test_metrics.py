"""Ranking metrics against brute-force pair and rank enumerations."""

import numpy as np
import pytest

from shiftcomp.errors import ShapeError
from shiftcomp.metrics import (auc, average_precision, binary_cross_entropy_rows,
                               effective_sample_size, evaluate_multilabel, f1,
                               weighted_risk)
from shiftcomp.shift import ShiftWeights


def auc_brute(scores, labels):
    """All positive/negative pairs, half credit on score ties."""
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    if len(pos) == 0 or len(neg) == 0:
        return None
    total = 0.0
    for sp in pos:
        for sn in neg:
            if sp > sn:
                total += 1.0
            elif sp == sn:
                total += 0.5
    return total / (len(pos) * len(neg))


def ap_brute(scores, labels):
    """Walk ranks in (descending score, ascending index) order."""
    n = len(scores)
    order = sorted(range(n), key=lambda i: (-scores[i], i))
    n_pos = int(labels.sum())
    if n_pos == 0:
        return None
    hits = 0
    total = 0.0
    for rank, idx in enumerate(order, start=1):
        if labels[idx] == 1:
            hits += 1
            total += hits / rank
    return total / n_pos


class TestAuc:
    def test_perfect_ranking(self):
        assert auc([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 1.0

    def test_reversed_ranking(self):
        assert auc([0.1, 0.2, 0.8, 0.9], [1, 1, 0, 0]) == 0.0

    def test_hand_case(self):
        assert auc([0.9, 0.8, 0.7, 0.6], [1, 0, 1, 0]) == 0.75

    def test_single_class_undefined(self):
        assert auc([0.1, 0.9], [1, 1]) is None
        assert auc([0.1, 0.9], [0, 0]) is None

    def test_ties_half_credit(self):
        assert auc([0.5, 0.5], [1, 0]) == 0.5

    def test_monotone_transform_invariance(self):
        rng = np.random.default_rng(3)
        scores = rng.random(40)
        labels = (rng.random(40) < 0.4).astype(float)
        base = auc(scores, labels)
        assert auc(np.exp(scores), labels) == pytest.approx(base, abs=1e-12)
        assert auc(scores * 7.0 + 3.0, labels) == pytest.approx(base, abs=1e-12)

    def test_rejects_non_binary_labels(self):
        with pytest.raises(ValueError):
            auc([0.5, 0.5], [1, 2])

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            auc([0.5], [1, 0])


class TestAveragePrecision:
    def test_positives_first(self):
        assert average_precision([0.9, 0.8, 0.1], [1, 1, 0]) == 1.0

    def test_hand_case(self):
        want = (1.0 / 2.0 + 2.0 / 3.0) / 2.0
        assert average_precision([0.9, 0.8, 0.7], [0, 1, 1]) == pytest.approx(want, abs=1e-12)

    def test_single_positive_ranked_last(self):
        for k in (2, 5, 9):
            scores = np.linspace(1.0, 0.0, k)
            labels = np.zeros(k)
            labels[-1] = 1
            assert average_precision(scores, labels) == pytest.approx(1.0 / k, abs=1e-12)

    def test_no_positives_undefined(self):
        assert average_precision([0.5, 0.6], [0, 0]) is None

    def test_tie_break_by_index_is_deterministic(self):
        scores = np.array([0.5, 0.5, 0.5])
        labels = np.array([0.0, 1.0, 0.0])
        # positive sits at index 1, so it lands at rank 2 among the ties
        assert average_precision(scores, labels) == 0.5


class TestF1:
    def test_perfect(self):
        assert f1([0.9, 0.9, 0.1], [1, 1, 0]) == 1.0

    def test_all_negative_predictions(self):
        assert f1([0.1, 0.2, 0.3], [1, 0, 1]) == 0.0

    def test_confusion_count_case(self):
        # TP=2, FP=1, FN=1
        scores = [0.9, 0.8, 0.7, 0.1]
        labels = [1, 1, 0, 1]
        assert f1(scores, labels) == pytest.approx(2.0 / 3.0, abs=1e-12)

    def test_threshold_is_strict(self):
        assert f1([0.5], [1], threshold=0.5) == 0.0
        assert f1([0.500001], [1], threshold=0.5) == 1.0


class TestBruteForceEquivalence:
    def test_200_random_instances(self):
        """Rank formulas match exhaustive pair/rank enumeration to 1e-12."""
        rng = np.random.default_rng(42)
        checked = 0
        for trial in range(200):
            n = 50
            # coarse score grid forces plenty of ties
            scores = rng.integers(0, 10, size=n) / 10.0
            labels = (rng.random(n) < 0.35).astype(float)
            want_auc = auc_brute(scores, labels)
            want_ap = ap_brute(scores, labels)
            got_auc = auc(scores, labels)
            got_ap = average_precision(scores, labels)
            if want_auc is None:
                assert got_auc is None
            else:
                assert got_auc == pytest.approx(want_auc, abs=1e-12)
            if want_ap is None:
                assert got_ap is None
            else:
                assert got_ap == pytest.approx(want_ap, abs=1e-12)
            checked += 1
        assert checked == 200


class TestWeightedRisk:
    def test_unit_weights_mean(self):
        losses = np.array([1.0, 2.0, 3.0])
        assert weighted_risk(losses, np.ones(3)) == 2.0

    def test_one_hot_selects_sample(self):
        losses = np.array([1.0, 2.0, 3.0])
        w = np.array([0.0, 3.0, 0.0])
        assert weighted_risk(losses, w) == 2.0

    def test_discrete_population_identity(self):
        rng = np.random.default_rng(9)
        k = 12
        p = rng.random(k) + 0.1
        p /= p.sum()
        q = rng.random(k) + 0.1
        q /= q.sum()
        losses = rng.random(k)
        # population-level sums with exact ratio weights
        q_risk = (q * losses).sum()
        p_risk_weighted = (p * (q / p) * losses).sum()
        assert abs(q_risk - p_risk_weighted) < 1e-12

    def test_accepts_shift_weights(self):
        w = ShiftWeights(np.array([2.0, 0.0]), "oracle")
        assert weighted_risk(np.array([1.0, 5.0]), w) == 1.0

    def test_misalignment(self):
        with pytest.raises(ShapeError):
            weighted_risk(np.ones(3), np.ones(4))


class TestEffectiveSampleSize:
    def test_uniform_weights_full_size(self):
        assert effective_sample_size(np.ones(50)) == pytest.approx(50.0)

    def test_one_hot_collapses_to_one(self):
        w = np.zeros(50)
        w[7] = 50.0
        assert effective_sample_size(w) == pytest.approx(1.0)

    def test_zero_weights(self):
        assert effective_sample_size(np.zeros(5)) == 0.0


class TestEvaluateMultilabel:
    def test_single_class_label_excluded_from_macro(self):
        probs = np.array([[0.9, 0.4], [0.2, 0.6], [0.7, 0.5]])
        labels = np.array([[1.0, 1.0], [0.0, 1.0], [1.0, 1.0]])
        report = evaluate_multilabel(probs, labels)
        assert report.excluded_labels == [1]
        assert report.per_label_auc[1] is None
        assert report.macro_auc == report.per_label_auc[0]

    def test_macro_is_mean_of_defined(self):
        rng = np.random.default_rng(4)
        probs = rng.random((30, 3))
        labels = (rng.random((30, 3)) < 0.5).astype(float)
        report = evaluate_multilabel(probs, labels)
        assert report.excluded_labels == []
        assert report.macro_auc == pytest.approx(np.mean(report.per_label_auc))
        assert report.macro_ap == pytest.approx(np.mean(report.per_label_ap))
        assert report.macro_f1 == pytest.approx(np.mean(report.per_label_f1))

    def test_risks(self):
        probs = np.array([[0.8], [0.4]])
        labels = np.array([[1.0], [0.0]])
        losses = binary_cross_entropy_rows(probs, labels)
        report = evaluate_multilabel(probs, labels, weights=np.array([2.0, 0.0]))
        assert report.unweighted_risk == pytest.approx(losses.mean())
        assert report.weighted_risk == pytest.approx(2.0 * losses[0] / 2.0)

    def test_as_dict_round_trip(self):
        probs = np.array([[0.8], [0.4]])
        labels = np.array([[1.0], [0.0]])
        d = evaluate_multilabel(probs, labels).as_dict()
        assert d["n_samples"] == 2 and d["n_labels"] == 1
        assert d["macro_auc"] == 1.0
