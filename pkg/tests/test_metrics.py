import json

import numpy as np
import pytest

from fairflip.metrics import (MetricReport, accuracy, attacker_objective, auc,
                              delta_dp, delta_eo, mutual_information_kde,
                              wasserstein1_empirical)


class TestAttackerObjective:
    def test_all_negative_logits_give_zero(self):
        logits = -np.ones(6)
        sens = np.array([0, 0, 0, 1, 1, 1])
        assert attacker_objective(logits, sens, np.arange(6)) == 0.0

    def test_direct_count_case(self):
        # group0-test = {+,+}, group1-test = {+,-} -> |1 - 0.5| = 0.5
        logits = np.array([1.0, 2.0, 0.5, -0.5])
        sens = np.array([0, 0, 1, 1])
        assert attacker_objective(logits, sens, np.arange(4)) == pytest.approx(0.5)

    def test_invariant_to_positive_rescaling(self):
        rng = np.random.default_rng(0)
        logits = rng.normal(size=20)
        sens = rng.integers(0, 2, 20)
        sens[:2] = [0, 1]
        idx = np.arange(20)
        base = attacker_objective(logits, sens, idx)
        for scale in (0.01, 3.0, 1e6):
            assert attacker_objective(scale * logits, sens, idx) == pytest.approx(base)

    def test_invariant_to_group_relabeling(self):
        rng = np.random.default_rng(1)
        logits = rng.normal(size=30)
        sens = rng.integers(0, 2, 30)
        sens[:2] = [0, 1]
        idx = np.arange(30)
        assert attacker_objective(logits, sens, idx) == pytest.approx(
            attacker_objective(logits, 1 - sens, idx))

    def test_boundary_logit_counts_positive(self):
        logits = np.array([0.0, -1.0])
        sens = np.array([0, 1])
        assert attacker_objective(logits, sens, np.arange(2)) == pytest.approx(1.0)

    def test_empty_group_in_test_raises(self):
        with pytest.raises(ValueError):
            attacker_objective(np.ones(3), np.array([0, 0, 1]), np.array([0, 1]))


class TestParityMetrics:
    def test_identical_patterns_give_zero(self):
        hard = np.array([1, 0, 1, 0])
        sens = np.array([0, 0, 1, 1])
        assert delta_dp(hard, sens, np.arange(4)) == 0.0

    def test_direct_count(self):
        # group0 3/4 positive, group1 1/4 positive
        hard = np.array([1, 1, 1, 0, 1, 0, 0, 0])
        sens = np.array([0, 0, 0, 0, 1, 1, 1, 1])
        assert delta_dp(hard, sens, np.arange(8)) == pytest.approx(0.5)

    def test_matches_attacker_objective_on_test(self):
        rng = np.random.default_rng(2)
        logits = rng.normal(size=40)
        sens = rng.integers(0, 2, 40)
        sens[:2] = [0, 1]
        idx = np.arange(40)
        hard = (logits >= 0).astype(int)
        assert delta_dp(hard, sens, idx) == pytest.approx(
            attacker_objective(logits, sens, idx))

    def test_delta_eo_conditions_on_positives(self):
        hard = np.array([1, 0, 1, 1])
        labels = np.array([1, 1, 1, 0])
        sens = np.array([0, 0, 1, 1])
        # TPR0 = 1/2, TPR1 = 1/1
        assert delta_eo(hard, labels, sens, np.arange(4)) == pytest.approx(0.5)

    def test_undefined_metric_is_explicit_not_zero(self):
        hard = np.array([1, 0, 1])
        labels = np.array([0, 0, 1])
        sens = np.array([0, 0, 1])
        assert delta_eo(hard, labels, sens, np.arange(3)) is None
        assert delta_dp(hard, np.zeros(3, int), np.arange(3)) is None


class TestAuc:
    def test_perfect_separation(self):
        soft = np.array([0.9, 0.8, 0.2, 0.1])
        labels = np.array([1, 1, 0, 0])
        assert auc(soft, labels, np.arange(4)) == 1.0

    def test_all_ties_give_half(self):
        soft = np.full(6, 0.4)
        labels = np.array([1, 0, 1, 0, 1, 0])
        assert auc(soft, labels, np.arange(6)) == pytest.approx(0.5)

    def test_four_point_pair_enumeration(self):
        soft = np.array([0.9, 0.8, 0.7, 0.1])
        labels = np.array([1, 0, 1, 0])
        # oracle: enumerate the 4 pos-neg pairs; 3 concordant
        pos = soft[labels == 1]
        neg = soft[labels == 0]
        conc = np.mean([(1.0 if p > q else 0.5 if p == q else 0.0)
                        for p in pos for q in neg])
        assert conc == pytest.approx(0.75)
        assert auc(soft, labels, np.arange(4)) == pytest.approx(conc)

    def test_single_class_undefined(self):
        assert auc(np.array([0.1, 0.9]), np.array([1, 1]), np.arange(2)) is None

    def test_matches_rank_oracle_with_ties(self):
        rng = np.random.default_rng(3)
        soft = np.round(rng.random(50), 1)  # force ties
        labels = rng.integers(0, 2, 50)
        labels[:2] = [0, 1]
        idx = np.arange(50)
        pos = soft[labels == 1]
        neg = soft[labels == 0]
        oracle = np.mean([(1.0 if p > q else 0.5 if p == q else 0.0)
                          for p in pos for q in neg])
        assert auc(soft, labels, idx) == pytest.approx(oracle, abs=1e-12)


class TestWasserstein:
    def test_identical_samples(self):
        s = np.array([0.1, 0.5, 0.9])
        assert wasserstein1_empirical(s, s) == 0.0

    def test_point_masses(self):
        assert wasserstein1_empirical([0.0], [1.0]) == pytest.approx(1.0)

    def test_two_point_quantile_case(self):
        # |0.2-0.3|/2 + |0.4-0.5|/2 = 0.1
        assert wasserstein1_empirical([0.2, 0.4], [0.3, 0.5]) == pytest.approx(0.1)

    def test_matches_quantile_oracle_on_equal_sizes(self):
        rng = np.random.default_rng(4)
        a = rng.random(64)
        b = rng.random(64)
        oracle = np.mean(np.abs(np.sort(a) - np.sort(b)))
        assert wasserstein1_empirical(a, b) == pytest.approx(oracle, abs=1e-12)

    def test_empty_sample_raises(self):
        with pytest.raises(ValueError):
            wasserstein1_empirical([], [0.5])


class TestMutualInformation:
    def test_identical_group_distributions(self):
        preds = np.tile([0.2, 0.5, 0.8], 2)
        sens = np.array([0, 0, 0, 1, 1, 1])
        assert mutual_information_kde(preds, sens, h=0.1, m=500) <= 1e-6

    def test_nonnegative_on_random_configurations(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            n = int(rng.integers(6, 60))
            preds = rng.random(n)
            sens = rng.integers(0, 2, n)
            sens[:2] = [0, 1]
            assert mutual_information_kde(preds, sens, h=0.1, m=300) >= -1e-9

    def test_separated_groups_have_high_mi(self):
        preds = np.concatenate([np.full(30, 0.1), np.full(30, 0.9)])
        sens = np.concatenate([np.zeros(30, int), np.ones(30, int)])
        assert mutual_information_kde(preds, sens, h=0.1, m=2000) >= 0.5


class TestMetricReport:
    def test_serializes_absent_metrics_as_null(self):
        report = MetricReport(acc=0.5, auc=None, delta_dp=0.25, delta_eo=None,
                              node_set="test")
        payload = json.loads(json.dumps(report.to_dict()))
        assert payload["auc"] is None
        assert payload["delta_eo"] is None
        assert payload["acc"] == 0.5

    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            MetricReport(acc=1.5, auc=None, delta_dp=None, delta_eo=None,
                         node_set="test")

    def test_accuracy_boundary_positive(self):
        hard = (np.array([0.0, -0.1]) >= 0).astype(int)
        assert accuracy(hard, np.array([1, 0]), np.arange(2)) == 1.0
