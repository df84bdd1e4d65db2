"""Cross-model rank agreement: rank matrices, Kendall's W, rank frequencies.

Global importances are continuous sums, so exact ties have measure zero;
ranking still breaks any tie by ascending feature index to stay
deterministic, which keeps every rank row a strict permutation and lets
the concordance formula omit a tie correction.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import AlignmentError, UndefinedStatisticError, ValidationError


@dataclass(eq=False)
class RankMatrix:
    """m x n grid of per-model feature ranks; rank 1 = most important."""

    ranks: np.ndarray           # (m, n) int64, each row a permutation of 1..n
    feature_names: tuple
    model_ids: tuple

    @property
    def m(self) -> int:
        return self.ranks.shape[0]

    @property
    def n(self) -> int:
        return self.ranks.shape[1]

    def validate(self) -> None:
        expected = np.arange(1, self.n + 1)
        for row in self.ranks:
            if not np.array_equal(np.sort(row), expected):
                raise ValidationError("each rank row must be a permutation of 1..n")

    def to_csv(self, path, config_digest: str = "") -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            if config_digest:
                fh.write(f"# config_digest={config_digest}\n")
            writer = csv.writer(fh)
            writer.writerow(["model"] + list(self.feature_names))
            for i in range(self.m):
                writer.writerow([self.model_ids[i]] + [int(r) for r in self.ranks[i]])


@dataclass(frozen=True)
class ConcordanceReport:
    """Kendall's W with its chi-square significance test."""

    w: float
    s: float
    r_i: tuple                  # per-feature rank sums
    r_bar: float
    m: int
    n: int
    chi_square: float = None
    df: int = None
    p_value: float = None

    def to_dict(self) -> dict:
        return {
            "w": self.w,
            "s": self.s,
            "r_i": list(self.r_i),
            "r_bar": self.r_bar,
            "m": self.m,
            "n": self.n,
            "chi_square": self.chi_square,
            "df": self.df,
            "p_value": self.p_value,
        }


@dataclass(frozen=True)
class FeatureRankStats:
    feature: str
    counts: dict                # rank -> occurrences across models
    unique_ranks: int
    min_rank: int
    max_rank: int
    mean_rank: float


@dataclass(frozen=True)
class RankFrequencyTable:
    """Per-feature rank histograms plus the summary views used in reports."""

    stats: tuple                # FeatureRankStats per feature, matrix order
    m: int

    def by_feature(self, name: str) -> FeatureRankStats:
        for entry in self.stats:
            if entry.feature == name:
                return entry
        raise KeyError(name)

    def top_by_mean_rank(self, k: int) -> list:
        """The k most important features (numerically smallest mean rank)."""
        order = sorted(range(len(self.stats)),
                       key=lambda i: (self.stats[i].mean_rank, i))
        return [self.stats[i] for i in order[:k]]

    def bottom_by_mean_rank(self, k: int) -> list:
        order = sorted(range(len(self.stats)),
                       key=lambda i: (-self.stats[i].mean_rank, i))
        return [self.stats[i] for i in order[:k]]

    def most_rank_varied(self, k: int) -> list:
        """The k features with the most distinct ranks across models."""
        order = sorted(range(len(self.stats)),
                       key=lambda i: (-self.stats[i].unique_ranks, i))
        return [self.stats[i] for i in order[:k]]

    def to_dict(self) -> dict:
        return {
            "m": self.m,
            "features": [
                {
                    "feature": e.feature,
                    "counts": {str(r): c for r, c in sorted(e.counts.items())},
                    "unique_ranks": e.unique_ranks,
                    "min_rank": e.min_rank,
                    "max_rank": e.max_rank,
                    "mean_rank": e.mean_rank,
                }
                for e in self.stats
            ],
        }


def rank_features(importances, model_ids=None) -> RankMatrix:
    """Convert per-model global importances to ranks (1 = largest score)."""
    if len(importances) < 2:
        raise ValidationError("ranking requires at least 2 models")
    names = importances[0].feature_names
    for imp in importances[1:]:
        if imp.feature_names != names:
            raise AlignmentError("importances do not share a common feature list")

    m, n = len(importances), len(names)
    ranks = np.empty((m, n), dtype=np.int64)
    for i, imp in enumerate(importances):
        # Stable sort on descending score: ties fall back to ascending index.
        order = np.argsort(-imp.scores, kind="stable")
        ranks[i, order] = np.arange(1, n + 1)
    if model_ids is None:
        model_ids = tuple(range(m))
    elif len(model_ids) != m:
        raise AlignmentError("model_ids must align with importances")
    return RankMatrix(
        ranks=ranks,
        feature_names=names,
        model_ids=tuple(model_ids),
    )


def kendalls_w(rank_matrix: RankMatrix) -> ConcordanceReport:
    """Coefficient of concordance W = 12 S / (m^2 (n^3 - n)) over tie-free
    rank rows, with S the squared deviation of per-feature rank sums."""
    m, n = rank_matrix.m, rank_matrix.n
    if n < 2:
        raise UndefinedStatisticError("concordance needs at least 2 features")
    if m < 2:
        raise UndefinedStatisticError("concordance needs at least 2 models")
    rank_matrix.validate()

    r_i = rank_matrix.ranks.sum(axis=0).astype(np.float64)
    r_bar = m * (n + 1) / 2.0
    s = float(np.sum((r_i - r_bar) ** 2))
    w = 12.0 * s / (m * m * (n ** 3 - n))
    return ConcordanceReport(
        w=w, s=s, r_i=tuple(float(v) for v in r_i), r_bar=r_bar, m=m, n=n,
    )


def chi_square_test(w: float, m: int, n: int) -> tuple:
    """Large-m significance test for W: chi2 = m (n - 1) W on n - 1 degrees
    of freedom; the p-value is the upper chi-square tail."""
    if m < 2 or n < 2:
        raise UndefinedStatisticError("chi-square test needs m >= 2 and n >= 2")
    if not 0.0 <= w <= 1.0 + 1e-12:
        raise ValidationError(f"W must lie in [0, 1], got {w}")
    chi_square = m * (n - 1) * w
    df = n - 1
    return chi_square, df, chi_square_sf(chi_square, df)


def chi_square_sf(x: float, df: int) -> float:
    """Upper-tail chi-square probability Q(df/2, x/2)."""
    if df < 1:
        raise ValidationError(f"degrees of freedom must be >= 1, got {df}")
    if x < 0:
        raise ValidationError(f"chi-square statistic must be >= 0, got {x}")
    return regularized_gamma_q(df / 2.0, x / 2.0)


def regularized_gamma_q(a: float, x: float, eps: float = 1e-15,
                        max_iter: int = 10000) -> float:
    """Regularized upper incomplete gamma Q(a, x) = Gamma(a, x) / Gamma(a).

    Series expansion of P(a, x) for x < a + 1, Lentz continued fraction for
    the tail otherwise; both classic numerical-recipes forms.
    """
    if a <= 0:
        raise ValidationError(f"gamma shape must be > 0, got {a}")
    if x < 0:
        raise ValidationError(f"gamma argument must be >= 0, got {x}")
    if x == 0.0:
        return 1.0

    log_prefactor = -x + a * math.log(x) - math.lgamma(a)
    if x < a + 1.0:
        # P(a, x) = x^a e^-x / Gamma(a) * sum_k x^k / (a (a+1) ... (a+k))
        ap = a
        term = 1.0 / a
        total = term
        for _ in range(max_iter):
            ap += 1.0
            term *= x / ap
            total += term
            if abs(term) < abs(total) * eps:
                break
        p = total * math.exp(log_prefactor)
        return min(max(1.0 - p, 0.0), 1.0)

    # Q(a, x) = x^a e^-x / Gamma(a) * 1/(x+1-a- 1(1-a)/(x+3-a- ...))
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b if b != 0 else 1.0 / tiny
    frac = d
    for i in range(1, max_iter + 1):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        frac *= delta
        if abs(delta - 1.0) < eps:
            break
    q = math.exp(log_prefactor) * frac
    return min(max(q, 0.0), 1.0)


def rank_frequency(rank_matrix: RankMatrix) -> RankFrequencyTable:
    """Histogram of ranks per feature with unique/min/max/mean summaries."""
    rank_matrix.validate()
    stats = []
    for j, name in enumerate(rank_matrix.feature_names):
        col = rank_matrix.ranks[:, j]
        values, counts = np.unique(col, return_counts=True)
        stats.append(FeatureRankStats(
            feature=name,
            counts={int(v): int(c) for v, c in zip(values, counts)},
            unique_ranks=len(values),
            min_rank=int(values[0]),
            max_rank=int(values[-1]),
            mean_rank=float(col.mean()),
        ))
    return RankFrequencyTable(stats=tuple(stats), m=rank_matrix.m)


def subgroup_concordance(rank_matrix: RankMatrix, feature_subsets: dict) -> dict:
    """Kendall's W per named feature subset.

    Subset ranks are re-densified to 1..k within each model (preserving
    order) before applying the W formula, since its normalization assumes
    complete rank rows.
    """
    rank_matrix.validate()
    reports = {}
    for name, indices in feature_subsets.items():
        indices = np.asarray(indices, dtype=np.int64)
        if indices.size < 2:
            raise UndefinedStatisticError(
                f"subset {name!r} needs at least 2 features, got {indices.size}")
        if indices.size and (indices.min() < 0 or indices.max() >= rank_matrix.n):
            raise ValidationError(f"subset {name!r} has out-of-range indices")
        sub = rank_matrix.ranks[:, indices]
        dense = np.empty_like(sub)
        for i in range(sub.shape[0]):
            order = np.argsort(sub[i], kind="stable")
            dense[i, order] = np.arange(1, indices.size + 1)
        sub_matrix = RankMatrix(
            ranks=dense,
            feature_names=tuple(rank_matrix.feature_names[j] for j in indices),
            model_ids=rank_matrix.model_ids,
        )
        report = kendalls_w(sub_matrix)
        chi_square, df, p_value = chi_square_test(report.w, report.m, report.n)
        reports[name] = ConcordanceReport(
            w=report.w, s=report.s, r_i=report.r_i, r_bar=report.r_bar,
            m=report.m, n=report.n,
            chi_square=chi_square, df=df, p_value=p_value,
        )
    return reports


def full_concordance(rank_matrix: RankMatrix) -> ConcordanceReport:
    """Kendall's W over all features with the chi-square fields filled in."""
    report = kendalls_w(rank_matrix)
    chi_square, df, p_value = chi_square_test(report.w, report.m, report.n)
    return ConcordanceReport(
        w=report.w, s=report.s, r_i=report.r_i, r_bar=report.r_bar,
        m=report.m, n=report.n,
        chi_square=chi_square, df=df, p_value=p_value,
    )
