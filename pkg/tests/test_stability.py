import itertools
import math

import numpy as np
import pytest

from shapstab import (
    GlobalImportance,
    chi_square_test,
    kendalls_w,
    rank_features,
    rank_frequency,
    subgroup_concordance,
)
from shapstab.errors import AlignmentError, UndefinedStatisticError, ValidationError
from shapstab.stability import RankMatrix, chi_square_sf, full_concordance, regularized_gamma_q


def _importance(scores, names=None):
    scores = np.asarray(scores, dtype=float)
    names = names or tuple(f"f{i}" for i in range(len(scores)))
    return GlobalImportance(scores=scores, feature_names=tuple(names))


def _rank_matrix(rows):
    rows = np.asarray(rows, dtype=np.int64)
    return RankMatrix(ranks=rows,
                      feature_names=tuple(f"f{i}" for i in range(rows.shape[1])),
                      model_ids=tuple(range(rows.shape[0])))


class TestRankFeatures:
    def test_basic_ordering(self):
        matrix = rank_features([_importance([3.0, 1.0, 2.0]),
                                _importance([3.0, 1.0, 2.0])])
        assert matrix.ranks.tolist() == [[1, 3, 2], [1, 3, 2]]

    def test_identical_models_identical_rows(self):
        imp = _importance([5.0, 4.0, 3.0, 7.0])
        matrix = rank_features([imp] * 5)
        assert np.all(matrix.ranks == matrix.ranks[0])

    def test_tie_broken_by_feature_index(self):
        matrix = rank_features([_importance([2.0, 2.0, 1.0])] * 2)
        assert matrix.ranks[0].tolist() == [1, 2, 3]

    def test_rows_are_permutations(self, rng):
        imps = [_importance(rng.random(8)) for _ in range(6)]
        matrix = rank_features(imps)
        matrix.validate()

    def test_mismatched_features_rejected(self):
        with pytest.raises(AlignmentError):
            rank_features([_importance([1.0, 2.0]),
                           _importance([1.0, 2.0], names=("a", "b"))])

    def test_needs_two_models(self):
        with pytest.raises(ValidationError):
            rank_features([_importance([1.0, 2.0])])


class TestKendallsW:
    def test_identical_rankings_give_one(self):
        matrix = _rank_matrix([[1, 2, 3, 4]] * 7)
        assert kendalls_w(matrix).w == 1.0

    def test_hand_case(self):
        # rankings (1,2,3) and (2,1,3): R = (3,3,6), R_bar = 4, S = 6
        matrix = _rank_matrix([[1, 2, 3], [2, 1, 3]])
        report = kendalls_w(matrix)
        assert report.r_i == (3.0, 3.0, 6.0)
        assert report.r_bar == 4.0
        assert report.s == 6.0
        assert report.w == pytest.approx(0.75, abs=1e-12)

    def test_rank_sum_identity(self, rng):
        ranks = np.array([rng.permutation(6) + 1 for _ in range(9)])
        report = kendalls_w(_rank_matrix(ranks))
        assert sum(report.r_i) == 9 * 6 * 7 / 2
        assert report.r_bar == 9 * 7 / 2

    def test_w_in_unit_interval(self, rng):
        for _ in range(20):
            ranks = np.array([rng.permutation(5) + 1 for _ in range(4)])
            w = kendalls_w(_rank_matrix(ranks)).w
            assert 0.0 <= w <= 1.0

    def test_invariant_to_model_permutation(self, rng):
        ranks = np.array([rng.permutation(7) + 1 for _ in range(5)])
        w = kendalls_w(_rank_matrix(ranks)).w
        shuffled = ranks[rng.permutation(5)]
        assert kendalls_w(_rank_matrix(shuffled)).w == pytest.approx(w, abs=0)

    def test_invariant_to_common_feature_permutation(self, rng):
        ranks = np.array([rng.permutation(7) + 1 for _ in range(5)])
        w = kendalls_w(_rank_matrix(ranks)).w
        perm = rng.permutation(7)
        assert kendalls_w(_rank_matrix(ranks[:, perm])).w == pytest.approx(w, abs=0)

    def test_two_model_spearman_identity(self, rng):
        # For m = 2 tie-free rankings, W = 1 - 3 * sum(d^2) / (n^3 - n):
        # monotone (decreasing) in the squared rank distance. Exhaustive
        # over n <= 4, sampled for n in 5..8.
        def check(r1, r2):
            n = len(r1)
            d2 = float(np.sum((np.asarray(r1) - np.asarray(r2)) ** 2))
            w = kendalls_w(_rank_matrix([r1, r2])).w
            assert w == pytest.approx(1.0 - 3.0 * d2 / (n ** 3 - n), abs=1e-12)

        for n in (2, 3, 4):
            base = tuple(range(1, n + 1))
            for perm in itertools.permutations(base):
                check(base, perm)
        for n in (5, 6, 7, 8):
            for _ in range(30):
                check(rng.permutation(n) + 1, rng.permutation(n) + 1)

    def test_invalid_row_rejected(self):
        with pytest.raises(ValidationError):
            kendalls_w(_rank_matrix([[1, 2, 2], [1, 2, 3]]))

    def test_single_feature_rejected(self):
        with pytest.raises(UndefinedStatisticError):
            kendalls_w(_rank_matrix([[1], [1]]))


class TestChiSquare:
    def test_zero_w(self):
        chi, df, p = chi_square_test(0.0, m=10, n=5)
        assert chi == 0.0 and df == 4 and p == 1.0

    def test_hand_case(self):
        chi, df, p = chi_square_test(0.75, m=2, n=3)
        assert chi == pytest.approx(3.0)
        assert df == 2
        assert p == pytest.approx(math.exp(-1.5), abs=1e-10)

    def test_large_statistic_underflows_to_zero(self):
        chi, df, p = chi_square_test(0.9775, m=100, n=79)
        assert chi == pytest.approx(100 * 78 * 0.9775)
        assert df == 78
        assert p < 1e-300

    def test_gamma_q_against_mpmath(self):
        mpmath = pytest.importorskip("mpmath")
        mpmath.mp.dps = 40
        worst = 0.0
        for df in (1, 2, 3, 5, 10, 50, 120, 200):
            a = df / 2.0
            for x in (1e-6, 0.1, 0.5, 1.0, 2.0, 5.0, 10.0, 40.0, 120.0, 400.0):
                got = regularized_gamma_q(a, x / 2.0)
                want = float(mpmath.gammainc(a, x / 2.0, mpmath.inf,
                                             regularized=True))
                worst = max(worst, abs(got - want))
        assert worst < 1e-10

    def test_sf_monotone_in_x(self):
        values = [chi_square_sf(x, 7) for x in np.linspace(0, 60, 100)]
        assert all(a >= b - 1e-15 for a, b in zip(values, values[1:]))


class TestRankFrequency:
    def test_histograms_sum_to_m(self, rng):
        ranks = np.array([rng.permutation(6) + 1 for _ in range(11)])
        table = rank_frequency(_rank_matrix(ranks))
        for entry in table.stats:
            assert sum(entry.counts.values()) == 11

    def test_mean_rank_matches_concordance_sums(self, rng):
        ranks = np.array([rng.permutation(6) + 1 for _ in range(11)])
        matrix = _rank_matrix(ranks)
        table = rank_frequency(matrix)
        report = kendalls_w(matrix)
        for j, entry in enumerate(table.stats):
            assert entry.mean_rank == pytest.approx(report.r_i[j] / 11, abs=0)

    def test_stats_fields(self):
        matrix = _rank_matrix([[1, 2, 3], [1, 3, 2], [1, 2, 3]])
        table = rank_frequency(matrix)
        first = table.by_feature("f0")
        assert first.counts == {1: 3}
        assert first.unique_ranks == 1
        second = table.by_feature("f1")
        assert second.counts == {2: 2, 3: 1}
        assert (second.min_rank, second.max_rank) == (2, 3)

    def test_views(self):
        matrix = _rank_matrix([[1, 2, 3, 4], [1, 2, 4, 3]])
        table = rank_frequency(matrix)
        top = table.top_by_mean_rank(2)
        assert [e.feature for e in top] == ["f0", "f1"]
        bottom = table.bottom_by_mean_rank(1)
        assert bottom[0].feature in ("f2", "f3")
        varied = table.most_rank_varied(2)
        assert {e.feature for e in varied} == {"f2", "f3"}


class TestSubgroups:
    def test_full_subset_matches_global(self, rng):
        ranks = np.array([rng.permutation(6) + 1 for _ in range(5)])
        matrix = _rank_matrix(ranks)
        full = full_concordance(matrix)
        sub = subgroup_concordance(matrix, {"all": list(range(6))})["all"]
        assert sub.w == pytest.approx(full.w, abs=0)
        assert sub.p_value == pytest.approx(full.p_value, abs=0)

    def test_agreeing_subset_gives_one(self):
        # models disagree globally but order f0 > f1 identically
        matrix = _rank_matrix([[1, 2, 3, 4], [3, 4, 1, 2]])
        report = subgroup_concordance(matrix, {"pair": [0, 1]})["pair"]
        assert report.w == 1.0

    def test_small_subset_rejected(self):
        matrix = _rank_matrix([[1, 2, 3], [1, 2, 3]])
        with pytest.raises(UndefinedStatisticError):
            subgroup_concordance(matrix, {"solo": [0]})

    def test_out_of_range_subset(self):
        matrix = _rank_matrix([[1, 2, 3], [1, 2, 3]])
        with pytest.raises(ValidationError):
            subgroup_concordance(matrix, {"bad": [0, 9]})
