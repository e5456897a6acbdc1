import math
from fractions import Fraction

import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from gradprompt.dataset import Label
from gradprompt.metrics import (ConfusionCounts, ScoredPrediction, f1, f1_from, meets_recall,
                                point_precision_at_recall, precision, precision_at_recall_from_rates, recall,
                                scores, sweep_precision_at_recall)

G, N = Label.GRAD, Label.NON_GRAD


def brute_force(preds, threshold):
    """Exact oracle: try every cutoff, keep the best precision, lowest cutoff on ties."""
    n_pos = sum(t is G for _, t in preds)
    best = None
    for cut in sorted({s for s, _ in preds}):
        tp = sum(s >= cut and t is G for s, t in preds)
        fp = sum(s >= cut and t is N for s, t in preds)
        if Fraction(tp, n_pos) * 100 < Fraction(threshold):
            continue
        p = Fraction(tp, tp + fp) * 100
        if best is None or p > best[0]:
            best = (p, cut)
    return best


class TestPointMetrics:
    def test_worked_example(self):
        c = ConfusionCounts(tp=8, fp=2, fn=2, tn=88)
        assert precision(c) == pytest.approx(80.0)
        assert recall(c) == pytest.approx(80.0)
        assert f1(c) == pytest.approx(80.0)

    def test_asymmetric(self):
        c = ConfusionCounts(tp=3, fp=1, fn=3)
        assert precision(c) == 75.0 and recall(c) == 50.0
        assert f1(c) == pytest.approx(60.0)

    def test_no_positive_predictions_is_degenerate(self):
        s = scores(ConfusionCounts(fn=5, tn=5))
        assert (s.precision, s.recall, s.f1) == (0.0, 0.0, 0.0)
        assert s.degenerate == {"precision", "f1"}

    def test_no_positives_in_truth(self):
        s = scores(ConfusionCounts(fp=2, tn=3))
        assert "recall" in s.degenerate

    def test_from_labels(self):
        c = ConfusionCounts.from_labels([G, G, N, N, G], [G, N, G, N, G])
        assert c == ConfusionCounts(tp=2, fp=1, fn=1, tn=1)

    def test_negative_counts_rejected(self):
        with pytest.raises(ValueError):
            ConfusionCounts(tp=-1)

    @given(st.integers(0, 50), st.integers(0, 50), st.integers(0, 50))
    def test_f1_is_harmonic_mean(self, tp, fp, fn):
        c = ConfusionCounts(tp, fp, fn)
        p, r = precision(c), recall(c)
        if p > 0 and r > 0:
            assert f1(c) == pytest.approx(2 / (1 / p + 1 / r))
            assert min(p, r) - 1e-9 <= f1(c) <= max(p, r) + 1e-9
        # F1 also equals 2tp / (2tp + fp + fn)
        if tp:
            assert f1(c) == pytest.approx(200 * tp / (2 * tp + fp + fn))

    def test_f1_from_zero(self):
        assert f1_from(0, 0) == 0


class TestPointPrecisionAtRecall:
    @pytest.mark.parametrize("p,r,t,expected", [
        (81.6, 97.0, 95, 81.6), (81.6, 97.0, 85, 81.6),
        (61.2, 70.6, 95, 0.0), (61.2, 70.6, 85, 0.0),
        (72.6, 85.1, 85, 72.6), (72.6, 85.1, 95, 0.0),
        (86.9, 97.0, 95, 86.9),
    ])
    def test_rates_rule(self, p, r, t, expected):
        assert precision_at_recall_from_rates(p, r, t) == expected

    def test_exact_boundary_counts(self):
        # 19/20 recall is exactly 95%; float division would give 94.999...
        c = ConfusionCounts(tp=19, fp=1, fn=1)
        assert meets_recall(c, 95)
        assert point_precision_at_recall(c, 95) == 95.0
        assert point_precision_at_recall(ConfusionCounts(tp=18, fp=0, fn=2), 95) == 0.0

    def test_threshold_bounds(self):
        with pytest.raises(ValueError):
            point_precision_at_recall(ConfusionCounts(tp=1), 0)


class TestSweep:
    def test_small_example(self):
        preds = [ScoredPrediction(0.9, G), ScoredPrediction(0.8, G), ScoredPrediction(0.7, N),
                 ScoredPrediction(0.2, G)]
        res = sweep_precision_at_recall(preds, 66)
        assert res.best_precision == 100.0 and res.chosen_cutoff == 0.8
        res = sweep_precision_at_recall(preds, 100)
        assert res.best_precision == 75.0 and res.chosen_cutoff == 0.2

    def test_ties_fall_together(self):
        # splitting the 0.5 tie would give 100%; it must not be split
        preds = [ScoredPrediction(0.5, G), ScoredPrediction(0.5, N), ScoredPrediction(0.1, N)]
        res = sweep_precision_at_recall(preds, 50)
        assert res.best_precision == 50.0 and res.chosen_cutoff == 0.5

    def test_precision_tie_prefers_lower_cutoff(self):
        preds = [ScoredPrediction(3, G), ScoredPrediction(2, G), ScoredPrediction(1, G), ScoredPrediction(0, N)]
        assert sweep_precision_at_recall(preds, 30).chosen_cutoff == 1

    def test_separable_is_perfect(self):
        preds = [ScoredPrediction(s, G) for s in (5, 4, 3)] + [ScoredPrediction(s, N) for s in (2, 1)]
        assert sweep_precision_at_recall(preds, 95).reported == 100.0

    def test_needs_positive(self):
        with pytest.raises(ValueError):
            sweep_precision_at_recall([ScoredPrediction(1, N)], 95)

    def test_non_finite_score_rejected(self):
        with pytest.raises(ValueError):
            ScoredPrediction(math.nan, G)

    @settings(max_examples=400, deadline=None)
    @given(st.lists(st.tuples(st.integers(-5, 5), st.booleans()), min_size=1, max_size=50),
           st.sampled_from([50, 66, 85, 95, 100]))
    def test_matches_brute_force(self, raw, threshold):
        assume(any(pos for _, pos in raw))
        preds = [(float(s), G if pos else N) for s, pos in raw]
        res = sweep_precision_at_recall([ScoredPrediction(s, t) for s, t in preds], threshold)
        oracle = brute_force(preds, threshold)
        # the lowest cutoff always reaches 100% recall, so some cutoff qualifies
        assert res.reachable and oracle is not None
        assert res.best_precision == pytest.approx(float(oracle[0]))
        assert res.chosen_cutoff == oracle[1]

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.tuples(st.floats(-10, 10), st.booleans()), min_size=2, max_size=40))
    def test_monotone_in_threshold(self, raw):
        assume(any(pos for _, pos in raw))
        preds = [ScoredPrediction(s, G if pos else N) for s, pos in raw]
        values = [sweep_precision_at_recall(preds, t).reported for t in (50, 85, 95, 100)]
        assert all(a >= b - 1e-9 for a, b in zip(values, values[1:]))
