import numpy as np
import pytest

from conftest import random_model
from deepin.errors import ContractViolation
from deepin.harness.metrics import (
    auc,
    prediction_metrics,
    selection_metrics,
    structure_metrics,
    summarize,
)
from deepin.numerics import make_rng
from oracles import brute_auc


class TestPrediction:
    def test_perfect_regression(self):
        y = np.array([1.0, -2.0, 3.0])
        m = prediction_metrics(y, y)
        assert m["PE"] == 0.0 and m["MSE"] == 0.0

    def test_pe_formula(self):
        m = prediction_metrics(np.array([1.0, 1.0]), np.array([2.0, 0.0]), f0=np.array([1.0, 0.5]))
        assert m["PE"] == pytest.approx(2.0 / 4.0)
        assert m["MSE"] == pytest.approx(0.125)

    def test_perfect_classification(self):
        m = prediction_metrics(np.array([0.9, 0.8, 0.3]), np.array([1.0, 1.0, 0.0]), task="binary")
        assert m["ACC"] == 1.0 and m["AUC"] == 1.0

    def test_single_class_auc_missing(self):
        m = prediction_metrics(np.array([0.9, 0.8]), np.array([1.0, 1.0]), task="binary")
        assert m["AUC"] is None and "diagnostic" in m

    def test_length_mismatch(self):
        with pytest.raises(ContractViolation):
            prediction_metrics(np.zeros(2), np.zeros(3))


class TestAuc:
    def test_ties_count_zero(self):
        assert auc([0.5, 0.5], [1, 0]) == 0.0

    @pytest.mark.parametrize("seed", range(100))
    def test_matches_pair_count(self, seed):
        rng = make_rng(seed)
        n = int(rng.integers(2, 201))
        scores = np.round(rng.random(n), 1)
        labels = (rng.random(n) < 0.5).astype(float)
        labels[0], labels[1] = 1.0, 0.0
        assert auc(scores, labels) == brute_auc(scores.tolist(), labels.tolist())


class TestSelection:
    def test_exact(self):
        assert selection_metrics({0, 1}, {0, 1}, 5) == (1.0, 0.0)

    def test_select_all(self):
        assert selection_metrics(range(10), {0, 1, 2}, 10) == (1.0, 1.0)

    def test_hand_count(self):
        tpr, fpr = selection_metrics({0, 1, 6}, {0, 1, 2}, 10)
        assert tpr == pytest.approx(2 / 3) and fpr == pytest.approx(1 / 7)

    def test_empty_support(self):
        with pytest.raises(ContractViolation):
            selection_metrics({0}, set(), 5)


class TestStructureAndSummary:
    def test_prop0(self):
        m = random_model(0)
        m.net.theta[:5] = 0.0
        s = structure_metrics(m)
        assert s["Prop0"] == 1.0 - np.count_nonzero(m.net.theta) / m.net.theta.size
        assert s["Dims"] == 4 and s["Variables"] == 4

    def test_summary_matches_recomputation(self):
        rows = [{"PE": v} for v in (0.1, 0.4, 0.25)] + [{"PE": None}]
        s = summarize(rows, ["PE"])["PE"]
        vals = np.array([0.1, 0.4, 0.25])
        assert abs(s["mean"] - vals.mean()) <= 1e-12
        assert abs(s["sd"] - vals.std(ddof=1)) <= 1e-12
        assert s["count"] == 3

    def test_summary_single_and_empty(self):
        assert summarize([{"a": 2.0}], ["a"])["a"]["sd"] == 0.0
        assert summarize([], ["a"])["a"]["mean"] is None
