import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oodgen import metrics
from oodgen.metrics import aupr, auroc, detection_error, fpr_at_tpr
from oodgen.nn import ContractError

from oracles import auroc_pairs, average_precision_direct, detection_error_enum, fpr_at_tpr_enum

scores = st.lists(st.integers(-6, 6).map(lambda k: k / 4), min_size=1, max_size=25)


def random_scores(rng):
    """Mixed tie-heavy and continuous score sets of at most 1000 points in total."""
    n_in, n_out = rng.integers(1, 500, size=2)
    if rng.random() < 0.5:
        return rng.integers(0, 8, n_in) / 8.0, rng.integers(2, 10, n_out) / 8.0
    return rng.normal(0, 1, n_in), rng.normal(rng.uniform(0, 2), 1, n_out)


class TestAuroc:
    def test_perfect_separation(self):
        assert auroc([0.1, 0.2], [0.3, 0.9]) == 1.0

    def test_identical_multisets(self):
        assert auroc([1, 2, 2, 3], [3, 2, 1, 2]) == 0.5

    def test_worked_example(self):
        assert auroc([0.1, 0.4], [0.3, 0.9]) == 0.75

    def test_empty_side_rejected(self):
        with pytest.raises(ContractError):
            auroc([], [1.0])
        with pytest.raises(ContractError):
            auroc([1.0], [])

    def test_matches_pairwise_on_random_sets(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            s_in, s_out = random_scores(rng)
            assert abs(auroc(s_in, s_out) - auroc_pairs(s_in, s_out)) < 1e-12

    def test_agrees_with_sklearn(self):
        from sklearn.metrics import roc_auc_score

        rng = np.random.default_rng(8)
        s_in, s_out = random_scores(rng)
        y = np.r_[np.zeros(len(s_in)), np.ones(len(s_out))]
        assert auroc(s_in, s_out) == pytest.approx(roc_auc_score(y, np.r_[s_in, s_out]), abs=1e-12)

    @given(scores, scores)
    def test_symmetry(self, s_in, s_out):
        # swapping roles and negating is the same as flipping every comparison
        a = auroc(s_in, s_out)
        assert a + auroc(s_out, s_in) == pytest.approx(1.0, abs=1e-12)
        assert auroc(-np.array(s_out), -np.array(s_in)) == pytest.approx(a, abs=1e-12)


class TestFprAtTpr:
    def test_perfect_separation(self):
        assert fpr_at_tpr([0.0, 0.1], [0.5, 0.6]) == 0.0

    def test_identical_distributions(self):
        s = np.arange(100.0)
        assert abs(fpr_at_tpr(s, s) - 0.95) <= 0.01

    def test_hand_sweep(self):
        assert fpr_at_tpr([0.5], np.arange(1, 101)) == 0.0

    def test_matches_enumeration(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            s_in, s_out = random_scores(rng)
            assert abs(fpr_at_tpr(s_in, s_out) - fpr_at_tpr_enum(s_in, s_out)) < 1e-12

    def test_other_targets(self):
        s_in, s_out = [0.1, 0.2, 0.3, 0.4], [0.15, 0.35, 0.5, 0.6]
        assert fpr_at_tpr(s_in, s_out, 0.5) == fpr_at_tpr_enum(s_in, s_out, 0.5) == 0.0
        assert fpr_at_tpr(s_in, s_out, 1.0) == fpr_at_tpr_enum(s_in, s_out, 1.0) == 0.75


class TestDetectionError:
    def test_perfect_separation(self):
        assert detection_error([0.0, 0.1], [0.5, 0.6]) == 0.0

    def test_identical_distributions(self):
        assert detection_error([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]) == 0.5

    def test_worked_example(self):
        assert detection_error([0.0, 1.0], [0.5, 2.0]) == 0.25

    def test_matches_enumeration(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            s_in, s_out = random_scores(rng)
            assert abs(detection_error(s_in, s_out) - detection_error_enum(s_in, s_out)) < 1e-12


class TestAupr:
    def test_perfect_separation(self):
        assert aupr([0.1, 0.2], [0.3, 0.9], "out") == 1.0
        assert aupr([0.1, 0.2], [0.3, 0.9], "in") == 1.0

    def test_top_ranked_positive(self):
        assert aupr([0.1, 0.8], [0.9], "out") == 1.0

    def test_random_scorer_balanced(self):
        rng = np.random.default_rng(6)
        s = rng.random(20000)
        assert abs(aupr(s[:10000], s[10000:]) - 0.5) < 0.05

    def test_bad_positive(self):
        with pytest.raises(ContractError):
            aupr([0.0], [1.0], "both")

    def test_matches_direct_sum(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            s_in, s_out = random_scores(rng)
            for pos in ("in", "out"):
                assert abs(aupr(s_in, s_out, pos) - average_precision_direct(s_in, s_out, pos)) < 1e-12

    def test_agrees_with_sklearn(self):
        from sklearn.metrics import average_precision_score

        rng = np.random.default_rng(9)
        s_in, s_out = random_scores(rng)
        y = np.r_[np.zeros(len(s_in)), np.ones(len(s_out))]
        s = np.r_[s_in, s_out]
        assert aupr(s_in, s_out, "out") == pytest.approx(average_precision_score(y, s), abs=1e-12)
        assert aupr(s_in, s_out, "in") == pytest.approx(average_precision_score(1 - y, -s), abs=1e-12)


class TestProperties:
    @settings(max_examples=60, deadline=None)
    @given(scores, scores)
    def test_monotone_invariance(self, s_in, s_out):
        f = lambda s: np.exp(3 * np.asarray(s)) + 1.0  # noqa: E731  strictly increasing
        a, b = metrics.evaluate(s_in, s_out), metrics.evaluate(f(s_in), f(s_out))
        for k, v in a.values().items():
            assert b.values()[k] == pytest.approx(v, abs=1e-12)

    @settings(max_examples=60, deadline=None)
    @given(scores, scores)
    def test_values_in_unit_interval(self, s_in, s_out):
        for v in metrics.evaluate(s_in, s_out).values().values():
            assert 0.0 <= v <= 1.0

    @settings(max_examples=40, deadline=None)
    @given(scores, scores)
    def test_oracles_on_small_sets(self, s_in, s_out):
        assert auroc(s_in, s_out) == pytest.approx(auroc_pairs(s_in, s_out), abs=1e-12)
        assert fpr_at_tpr(s_in, s_out) == pytest.approx(fpr_at_tpr_enum(s_in, s_out), abs=1e-12)
        assert detection_error(s_in, s_out) == pytest.approx(detection_error_enum(s_in, s_out), abs=1e-12)
        assert aupr(s_in, s_out) == pytest.approx(average_precision_direct(s_in, s_out), abs=1e-12)


class TestReports:
    def _reports(self):
        return [
            metrics.evaluate([0.1, 0.4], [0.3, 0.9], "ood_class_prob", "toy3d", "sphere", 0),
            metrics.evaluate([0.2, 0.1], [0.5, 0.1], "neg_max_inlier_prob", "toy3d", "sphere", 0),
        ]

    def test_csv_round_trip(self):
        reports = self._reports()
        back = metrics.reports_from_csv(metrics.reports_to_csv(reports))
        assert back == reports

    def test_csv_columns(self):
        header = metrics.reports_to_csv(self._reports()).splitlines()[0].split(",")
        assert set(metrics.METRIC_COLUMNS) <= set(header)
        assert "seed" in header

    def test_json_mirror(self):
        doc = json.loads(metrics.reports_to_json(self._reports(), accuracy={"n+1": 0.9}))
        cell = doc["results"]["toy3d"]["sphere"]["ood_class_prob"]
        assert cell["auroc"] == 0.75
        assert doc["accuracy"] == {"n+1": 0.9}

    def test_table_is_percent(self):
        text = metrics.format_table(self._reports())
        assert "75.0" in text

    def test_counts(self):
        r = metrics.evaluate([1, 2, 3], [4], "r")
        assert (r.n_in, r.n_out) == (3, 1)
        assert math.isfinite(r.auroc)
