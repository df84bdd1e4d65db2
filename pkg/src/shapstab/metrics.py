"""Credit-risk performance metrics: decile KS, confusion suite, AUROC.

Ratios with a zero denominator are reported as None ("undefined"), never
silently coerced to 0, so downstream medians are not distorted.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import DimensionError, UndefinedMetricError, ValidationError

N_BINS = 10


@dataclass(frozen=True)
class DecileBin:
    n: int
    bads: int
    goods: int
    cum_bad_rate: float
    cum_good_rate: float
    ks_component: float


@dataclass(frozen=True)
class DecileTable:
    """Ten volume bins over ascending scores with cumulative capture rates."""

    bins: tuple

    HEADER = ("bin", "n", "bads", "goods", "cum_bad_rate", "cum_good_rate",
              "ks_component")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.HEADER)
            self.write_rows(writer)

    def write_rows(self, writer) -> None:
        for i, b in enumerate(self.bins, start=1):
            writer.writerow([
                i, b.n, b.bads, b.goods,
                repr(b.cum_bad_rate), repr(b.cum_good_rate), repr(b.ks_component),
            ])


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int
    threshold: float


@dataclass(frozen=True)
class MetricSuite:
    """Threshold metrics plus the threshold-free pair (auroc, ks).

    None marks an undefined ratio (zero denominator).
    """

    accuracy: float = None
    sensitivity: float = None
    specificity: float = None
    precision: float = None
    npv: float = None
    f1: float = None
    g_mean: float = None
    mcc: float = None
    auroc: float = None
    ks: float = None

    FIELDS = ("accuracy", "sensitivity", "specificity", "precision", "npv",
              "f1", "g_mean", "mcc", "auroc", "ks")

    def to_dict(self) -> dict:
        return {name: getattr(self, name) for name in self.FIELDS}

    def completed(self, auroc: float, ks: float) -> "MetricSuite":
        return replace(self, auroc=auroc, ks=ks)


def _check_pair(scores, labels) -> tuple:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise DimensionError(
            f"scores and labels must be equal-length vectors, got "
            f"{scores.shape} and {labels.shape}")
    return scores, labels.astype(np.int64)


def decile_ks(scores, labels) -> tuple:
    """Decile table and KS = max bin-level |cum bad rate - cum good rate|.

    Rows are sorted ascending by score (ties keep original order) and cut
    into ten volume bins; when n is not divisible by 10 the earliest bins
    absorb one extra row each.
    """
    scores, labels = _check_pair(scores, labels)
    n = len(scores)
    if n < N_BINS:
        raise ValidationError(f"need at least {N_BINS} rows for a decile table, got {n}")
    n_bad = int(labels.sum())
    n_good = n - n_bad
    if n_bad == 0 or n_good == 0:
        raise UndefinedMetricError("decile KS requires both classes present")

    order = np.argsort(scores, kind="stable")
    sorted_labels = labels[order]

    base, extra = divmod(n, N_BINS)
    sizes = [base + 1 if i < extra else base for i in range(N_BINS)]

    bins = []
    cum_bad = 0
    cum_good = 0
    start = 0
    ks = 0.0
    for size in sizes:
        chunk = sorted_labels[start:start + size]
        start += size
        bads = int(chunk.sum())
        goods = size - bads
        cum_bad += bads
        cum_good += goods
        cum_bad_rate = cum_bad / n_bad
        cum_good_rate = cum_good / n_good
        component = abs(cum_bad_rate - cum_good_rate)
        ks = max(ks, component)
        bins.append(DecileBin(
            n=size, bads=bads, goods=goods,
            cum_bad_rate=cum_bad_rate, cum_good_rate=cum_good_rate,
            ks_component=component,
        ))
    return DecileTable(bins=tuple(bins)), ks


def _ratio(num: float, den: float):
    return num / den if den else None


def confusion_at_threshold(scores, labels, threshold: float = 0.5) -> tuple:
    """Confusion counts and threshold metrics; score >= threshold is positive."""
    scores, labels = _check_pair(scores, labels)
    predicted = scores >= threshold
    actual = labels == 1
    tp = int(np.sum(predicted & actual))
    fp = int(np.sum(predicted & ~actual))
    fn = int(np.sum(~predicted & actual))
    tn = int(np.sum(~predicted & ~actual))
    counts = ConfusionCounts(tp=tp, fp=fp, tn=tn, fn=fn, threshold=threshold)

    n = tp + fp + tn + fn
    sensitivity = _ratio(tp, tp + fn)
    specificity = _ratio(tn, tn + fp)
    precision = _ratio(tp, tp + fp)
    f1 = None
    if precision is not None and sensitivity is not None and precision + sensitivity:
        f1 = 2.0 * precision * sensitivity / (precision + sensitivity)
    g_mean = None
    if sensitivity is not None and specificity is not None:
        g_mean = math.sqrt(sensitivity * specificity)
    mcc_den = math.sqrt(float(tp + fp) * (tp + fn) * (tn + fp) * (tn + fn))
    mcc = (tp * tn - fp * fn) / mcc_den if mcc_den else None

    suite = MetricSuite(
        accuracy=_ratio(tp + tn, n),
        sensitivity=sensitivity,
        specificity=specificity,
        precision=precision,
        npv=_ratio(tn, tn + fn),
        f1=f1,
        g_mean=g_mean,
        mcc=mcc,
    )
    return counts, suite


def auroc(scores, labels) -> float:
    """AUROC via the Mann-Whitney rank-sum statistic; ties count one half."""
    scores, labels = _check_pair(scores, labels)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUROC requires both classes present")

    sorted_scores = np.sort(scores)
    lo = np.searchsorted(sorted_scores, scores, side="left")
    hi = np.searchsorted(sorted_scores, scores, side="right")
    midranks = 0.5 * (lo + hi + 1)  # 1-based average rank over ties

    rank_sum = float(midranks[labels == 1].sum())
    u_stat = rank_sum - n_pos * (n_pos + 1) / 2.0
    return u_stat / (n_pos * n_neg)
