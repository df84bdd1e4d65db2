import numpy as np
import pytest

from _oracles import auroc_pairs_oracle, threshold_free_ks
from shapstab import auroc, confusion_at_threshold, decile_ks
from shapstab.errors import DimensionError, UndefinedMetricError, ValidationError


class TestDecileKS:
    def test_hand_built_perfect_separation(self):
        scores = np.arange(10) / 10.0
        labels = (np.arange(10) >= 5).astype(int)
        table, ks = decile_ks(scores, labels)
        assert ks == 1.0
        assert table.bins[4].cum_good_rate == 1.0
        assert table.bins[4].cum_bad_rate == 0.0
        assert [b.n for b in table.bins] == [1] * 10

    def test_constant_scores_near_zero_ks(self):
        n = 1000
        labels = (np.arange(n) % 4 == 0).astype(int)
        _, ks = decile_ks(np.zeros(n), labels)
        assert ks <= 1.0 / n + 1e-12  # at most remainder-binning noise

    def test_remainder_goes_to_early_bins(self):
        scores = np.arange(23) / 23.0
        labels = (np.arange(23) % 2).astype(int)
        table, _ = decile_ks(scores, labels)
        assert [b.n for b in table.bins] == [3, 3, 3] + [2] * 7
        assert sum(b.n for b in table.bins) == 23

    def test_cumulative_rates_end_at_one(self, rng):
        scores = rng.random(97)
        labels = rng.integers(0, 2, 97)
        table, _ = decile_ks(scores, labels)
        assert table.bins[-1].cum_bad_rate == pytest.approx(1.0)
        assert table.bins[-1].cum_good_rate == pytest.approx(1.0)

    def test_monotone_transform_invariance(self, rng):
        scores = rng.random(500)
        labels = rng.integers(0, 2, 500)
        _, ks = decile_ks(scores, labels)
        for transform in (lambda s: 3 * s - 1, np.exp, lambda s: s ** 3):
            _, ks_t = decile_ks(transform(scores), labels)
            assert ks_t == pytest.approx(ks, abs=1e-12)

    def test_threshold_free_ks_dominates_decile_ks(self, rng):
        n = 9000
        labels = (rng.random(n) < 0.22).astype(int)
        scores = rng.normal(size=n) + 1.1 * labels
        _, decile = decile_ks(scores, labels)
        free = threshold_free_ks(scores, labels)
        assert free >= decile - 1e-12
        assert free - decile <= 0.05

    def test_single_class_rejected(self):
        with pytest.raises(UndefinedMetricError):
            decile_ks(np.arange(10) / 10.0, np.ones(10, dtype=int))

    def test_table_csv_export(self, tmp_path, rng):
        scores = rng.random(40)
        labels = rng.integers(0, 2, 40)
        table, _ = decile_ks(scores, labels)
        path = tmp_path / "deciles.csv"
        table.to_csv(path)
        lines = path.read_text().strip().splitlines()
        assert lines[0].split(",") == list(table.HEADER)
        assert len(lines) == 11

    def test_too_short_rejected(self):
        with pytest.raises(ValidationError):
            decile_ks(np.arange(5) / 5.0, np.array([0, 1, 0, 1, 0]))

    def test_length_mismatch(self):
        with pytest.raises(DimensionError):
            decile_ks(np.zeros(10), np.zeros(9, dtype=int))


class TestConfusion:
    def test_perfect_predictor(self):
        labels = np.array([0, 1, 0, 1, 1])
        counts, suite = confusion_at_threshold(labels.astype(float), labels, 0.5)
        assert (counts.tp, counts.fp, counts.tn, counts.fn) == (3, 0, 2, 0)
        assert suite.accuracy == suite.precision == suite.sensitivity == suite.f1 == 1.0
        assert suite.mcc == pytest.approx(1.0)

    def test_all_negative_predictor_reference_prevalence(self):
        # 6,636 of 30,000 positive (22.12%): all-negative scores give
        # accuracy 77.88%, zero sensitivity, undefined precision.
        labels = np.zeros(30000, dtype=int)
        labels[:6636] = 1
        counts, suite = confusion_at_threshold(np.zeros(30000), labels, 0.5)
        assert counts.tp == 0 and counts.fp == 0
        assert suite.accuracy == pytest.approx(0.7788, abs=1e-12)
        assert suite.sensitivity == 0.0
        assert suite.precision is None
        assert suite.f1 is None
        assert suite.npv == pytest.approx(23364 / 30000)

    def test_threshold_inclusive(self):
        labels = np.array([1, 0])
        counts, _ = confusion_at_threshold(np.array([0.5, 0.49]), labels, 0.5)
        assert counts.tp == 1 and counts.tn == 1

    def test_counts_partition_n(self, rng):
        scores = rng.random(200)
        labels = rng.integers(0, 2, 200)
        counts, _ = confusion_at_threshold(scores, labels, 0.3)
        assert counts.tp + counts.fp + counts.tn + counts.fn == 200

    def test_f1_is_harmonic_mean(self, rng):
        scores = rng.random(300)
        labels = rng.integers(0, 2, 300)
        _, suite = confusion_at_threshold(scores, labels, 0.5)
        expected = (2 * suite.precision * suite.sensitivity
                    / (suite.precision + suite.sensitivity))
        assert suite.f1 == pytest.approx(expected, abs=1e-15)

    def test_g_mean_and_specificity(self):
        labels = np.array([1, 1, 0, 0])
        scores = np.array([0.9, 0.1, 0.8, 0.2])
        _, suite = confusion_at_threshold(scores, labels, 0.5)
        assert suite.sensitivity == 0.5
        assert suite.specificity == 0.5
        assert suite.g_mean == pytest.approx(0.5)

    def test_mcc_near_zero_on_permuted_labels(self, rng):
        n = 2000
        scores = rng.random(n)
        labels = (rng.random(n) < 0.25).astype(int)
        bound = 3.0 / np.sqrt(n)
        for _ in range(20):
            permuted = rng.permutation(labels)
            _, suite = confusion_at_threshold(scores, permuted, 0.5)
            assert abs(suite.mcc) <= bound

    def test_metric_ranges(self, rng):
        scores = rng.random(500)
        labels = rng.integers(0, 2, 500)
        _, suite = confusion_at_threshold(scores, labels, 0.5)
        for name in ("accuracy", "sensitivity", "specificity", "precision",
                     "npv", "f1", "g_mean"):
            value = getattr(suite, name)
            assert value is None or 0.0 <= value <= 1.0
        assert -1.0 <= suite.mcc <= 1.0


class TestAuroc:
    def test_perfect_ranking(self):
        labels = np.array([0, 1, 0, 1])
        assert auroc(labels.astype(float), labels) == 1.0

    def test_all_ties_half(self):
        labels = np.array([0, 1, 0, 1])
        assert auroc(np.ones(4), labels) == 0.5

    def test_matches_pair_oracle(self, rng):
        for _ in range(50):
            n = int(rng.integers(10, 200))
            scores = np.round(rng.random(n), 2)  # plenty of ties
            labels = rng.integers(0, 2, n)
            if labels.min() == labels.max():
                labels[:2] = [0, 1]
            assert auroc(scores, labels) == pytest.approx(
                auroc_pairs_oracle(scores, labels), abs=1e-12)

    def test_reversal_identity(self, rng):
        n = 300
        scores = rng.permutation(n).astype(float)  # tie-free
        labels = rng.integers(0, 2, n)
        labels[:2] = [0, 1]
        assert auroc(scores, labels) + auroc(-scores, labels) == pytest.approx(
            1.0, abs=1e-12)

    def test_single_class_rejected(self):
        with pytest.raises(UndefinedMetricError):
            auroc(np.arange(4, dtype=float), np.ones(4, dtype=int))
