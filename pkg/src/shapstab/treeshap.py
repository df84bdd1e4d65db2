"""Exact Shapley attribution of ensemble margins, plus the global ranking score.

Attributions are path-dependent: when a feature is "unknown" the walk
averages over both children weighted by training cover, so the background
distribution is the one recorded in the trees themselves. Values are in
margin (log-odds) units and satisfy base_value + sum(phi) = margin.

`brute_force_shap` evaluates the Shapley definition directly by enumerating
feature subsets; it exists to verify `shap_values` and refuses models using
more than 15 distinct features.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .dataset import DesignMatrix
from .errors import DimensionError, ValidationError
from .gbdt import TreeEnsemble

BRUTE_FORCE_FEATURE_CAP = 15


@dataclass(frozen=True)
class ShapRow:
    """Per-feature attributions for one row; margin units."""

    phi: np.ndarray
    base_value: float


@dataclass(eq=False)
class ShapMatrix:
    """Attributions for an evaluation set under one model."""

    phi: np.ndarray             # (n_rows, n_cols)
    base_value: float
    feature_names: tuple
    model_id: str = ""
    eval_id: str = ""

    @property
    def n_rows(self) -> int:
        return self.phi.shape[0]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(list(self.feature_names) + ["base_value"])
            for i in range(self.n_rows):
                writer.writerow([repr(float(v)) for v in self.phi[i]]
                                + [repr(float(self.base_value))])


@dataclass(frozen=True)
class GlobalImportance:
    """Per-feature sum of absolute attributions over an evaluation set."""

    scores: np.ndarray
    feature_names: tuple

    def __post_init__(self):
        if len(self.scores) != len(self.feature_names):
            raise ValidationError("scores and feature names must align")
        self.scores.setflags(write=False)

    def to_csv(self, path) -> None:
        order = sorted(range(len(self.scores)),
                       key=lambda i: (-self.scores[i], i))
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["feature", "score"])
            for i in order:
                writer.writerow([self.feature_names[i], repr(float(self.scores[i]))])


def base_value(model: TreeEnsemble) -> float:
    """Expected margin over the cover-weighted background: the base margin
    plus each tree's cover-weighted mean leaf value."""
    roots, feature, _thr, _left, _right, cover, value, _d = model.packed()
    total = model.base_margin
    n_nodes = len(feature)
    for t, root in enumerate(roots):
        end = roots[t + 1] if t + 1 < len(roots) else n_nodes
        leaves = np.flatnonzero(feature[root:end] < 0) + root
        total += model.learning_rate * float(
            np.dot(cover[leaves], value[leaves]) / cover[root])
    return total


def _check_row(model: TreeEnsemble, row) -> np.ndarray:
    row = np.asarray(row, dtype=np.float64)
    if row.ndim != 1 or row.shape[0] != model.n_cols:
        raise DimensionError(
            f"expected a row of length {model.n_cols}, got shape {row.shape}")
    return row


def shap_values(model: TreeEnsemble, row) -> ShapRow:
    """Exact path-dependent Shapley values for one row."""
    row = _check_row(model, row)
    matrix = shap_matrix(model, row.reshape(1, -1))
    return ShapRow(phi=matrix.phi[0], base_value=matrix.base_value)


def shap_matrix(model: TreeEnsemble, rows, model_id: str = "",
                eval_id: str = "") -> ShapMatrix:
    """Shapley values for every row of an evaluation set."""
    if isinstance(rows, DesignMatrix):
        values = rows.values
    else:
        values = np.asarray(rows, dtype=np.float64)
    if values.ndim != 2 or values.shape[1] != model.n_cols:
        raise DimensionError(
            f"expected rows of length {model.n_cols}, got shape {values.shape}")
    values = np.ascontiguousarray(values, dtype=np.float64)

    roots, feature, threshold, left, right, cover, value, max_depth = model.packed()
    phi = np.zeros((values.shape[0], model.n_cols), dtype=np.float64)
    if len(roots):
        _kernels.shap_batch(values, roots, feature, threshold, left, right,
                            cover, value, max_depth, model.learning_rate, phi)
    return ShapMatrix(
        phi=phi,
        base_value=base_value(model),
        feature_names=model.column_names,
        model_id=model_id,
        eval_id=eval_id,
    )


def _masked_expectation(tree, row, known: frozenset) -> float:
    """Walk the tree following `known` features through the row's branch and
    averaging unknown branches by cover ratio."""

    def walk(nd: int) -> float:
        f = int(tree.feature[nd])
        if f < 0:
            return float(tree.value[nd])
        if f in known:
            child = tree.left[nd] if row[f] < tree.threshold[nd] else tree.right[nd]
            return walk(int(child))
        lc, rc = int(tree.left[nd]), int(tree.right[nd])
        return (tree.cover[lc] * walk(lc) + tree.cover[rc] * walk(rc)) / tree.cover[nd]

    return walk(0)


def brute_force_shap(model: TreeEnsemble, row) -> ShapRow:
    """Shapley values by direct subset enumeration (verification oracle).

    phi_i = sum over S not containing i of
            |S|! (k-|S|-1)! / k! * [v(S + i) - v(S)]
    where k is the number of distinct features the model uses and v is the
    cover-weighted conditional expectation of the margin.
    """
    row = _check_row(model, row)
    for tree in model.trees:
        tree.validate(model.n_cols)

    used = sorted({int(f) for tree in model.trees
                   for f in tree.feature[tree.feature >= 0]})
    k = len(used)
    if k > BRUTE_FORCE_FEATURE_CAP:
        raise ValidationError(
            f"brute-force enumeration refused: {k} distinct features "
            f"exceeds the cap of {BRUTE_FORCE_FEATURE_CAP}")

    # v(S) for every subset of the used features, indexed by bitmask.
    v = np.empty(1 << k, dtype=np.float64)
    for mask in range(1 << k):
        known = frozenset(used[i] for i in range(k) if mask >> i & 1)
        total = model.base_margin
        for tree in model.trees:
            total += model.learning_rate * _masked_expectation(tree, row, known)
        v[mask] = total

    fact = [math.factorial(i) for i in range(k + 1)]
    weight = [fact[s] * fact[k - s - 1] / fact[k] for s in range(k)] if k else []

    phi = np.zeros(model.n_cols, dtype=np.float64)
    for i in range(k):
        bit = 1 << i
        acc = 0.0
        for mask in range(1 << k):
            if mask & bit:
                continue
            acc += weight[bin(mask).count("1")] * (v[mask | bit] - v[mask])
        phi[used[i]] = acc

    return ShapRow(phi=phi, base_value=float(v[0]))


def global_importance(shap: ShapMatrix) -> GlobalImportance:
    """Sum of absolute attributions per feature over the evaluation rows."""
    if shap.n_rows == 0:
        raise ValidationError("cannot aggregate importance over zero rows")
    return GlobalImportance(
        scores=np.abs(shap.phi).sum(axis=0),
        feature_names=shap.feature_names,
    )
