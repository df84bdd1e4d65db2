"""Binary-logistic gradient boosted trees with second-order split gains.

Each round fits one regression tree to the current gradient/hessian pair
(g = p - y, h = p(1 - p)), using the regularized gain

    1/2 [G_L^2/(H_L+lam) + G_R^2/(H_R+lam) - (G_L+G_R)^2/(H_L+H_R+lam)] - gamma

and leaf weights -G/(H+lam). Training is exact greedy over sorted unique
values and fully deterministic given (data, config, seed); the seeded RNG
is consumed only when row or column subsampling is enabled.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .dataset import DesignMatrix
from .errors import (
    DataError,
    DimensionError,
    ModelIntegrityError,
    TrainingError,
    ValidationError,
)


def sigmoid(m):
    m = np.asarray(m, dtype=np.float64)
    out = np.empty_like(m)
    pos = m >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-m[pos]))
    em = np.exp(m[~pos])
    out[~pos] = em / (1.0 + em)
    return out


def logit(prob: float) -> float:
    return math.log(prob / (1.0 - prob))


@dataclass(frozen=True)
class TrainConfig:
    """Boosting hyperparameters; bounds are enforced at construction."""

    n_rounds: int = 100
    learning_rate: float = 0.3
    max_depth: int = 6
    lam: float = 1.0
    gamma: float = 0.0
    min_child_hessian: float = 1.0
    subsample: float = 1.0
    colsample: float = 1.0
    base_score: float = 0.5

    def __post_init__(self):
        if self.n_rounds < 0:
            raise ValidationError(f"n_rounds must be >= 0, got {self.n_rounds}")
        if not self.learning_rate > 0:
            raise ValidationError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.max_depth < 0:
            raise ValidationError(f"max_depth must be >= 0, got {self.max_depth}")
        if self.lam < 0:
            raise ValidationError(f"lam must be >= 0, got {self.lam}")
        if self.gamma < 0:
            raise ValidationError(f"gamma must be >= 0, got {self.gamma}")
        if self.min_child_hessian < 0:
            raise ValidationError(
                f"min_child_hessian must be >= 0, got {self.min_child_hessian}")
        if not 0 < self.subsample <= 1:
            raise ValidationError(f"subsample must be in (0, 1], got {self.subsample}")
        if not 0 < self.colsample <= 1:
            raise ValidationError(f"colsample must be in (0, 1], got {self.colsample}")
        if not 0 < self.base_score < 1:
            raise ValidationError(f"base_score must be in (0, 1), got {self.base_score}")

    def to_dict(self) -> dict:
        return {
            "n_rounds": self.n_rounds,
            "learning_rate": self.learning_rate,
            "max_depth": self.max_depth,
            "lam": self.lam,
            "gamma": self.gamma,
            "min_child_hessian": self.min_child_hessian,
            "subsample": self.subsample,
            "colsample": self.colsample,
            "base_score": self.base_score,
        }


@dataclass(eq=False)
class Tree:
    """One regression tree in flat-array form; feature = -1 marks a leaf."""

    feature: np.ndarray     # int64
    threshold: np.ndarray   # float64
    left: np.ndarray        # int64
    right: np.ndarray       # int64
    cover: np.ndarray       # float64, sum of hessians routed through the node
    value: np.ndarray       # float64, leaf weight (0 on internal nodes)

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def depth(self) -> int:
        depths = np.zeros(self.n_nodes, dtype=np.int64)
        out = 0
        for nd in range(self.n_nodes):  # children always follow parents
            if self.feature[nd] >= 0:
                depths[self.left[nd]] = depths[nd] + 1
                depths[self.right[nd]] = depths[nd] + 1
            else:
                out = max(out, int(depths[nd]))
        return out

    def validate(self, n_cols: int) -> None:
        if np.any(self.cover <= 0):
            raise ModelIntegrityError("every node must have positive cover")
        internal = self.feature >= 0
        if np.any(self.feature[internal] >= n_cols):
            raise ModelIntegrityError("feature index out of range for column set")
        parent_cover = self.cover[internal]
        child_cover = self.cover[self.left[internal]] + self.cover[self.right[internal]]
        if np.any(np.abs(parent_cover - child_cover) > 1e-6 * np.maximum(parent_cover, 1.0)):
            raise ModelIntegrityError("cover must be additive over children")
        if not np.all(np.isfinite(self.value)):
            raise ModelIntegrityError("leaf weights must be finite")

    def to_node_dict(self) -> dict:
        def build(nd: int) -> dict:
            if self.feature[nd] < 0:
                return {"weight": float(self.value[nd]),
                        "cover": float(self.cover[nd])}
            return {
                "feature": int(self.feature[nd]),
                "threshold": float(self.threshold[nd]),
                "cover": float(self.cover[nd]),
                "left": build(int(self.left[nd])),
                "right": build(int(self.right[nd])),
            }
        return build(0)

    @classmethod
    def from_node_dict(cls, node: dict) -> "Tree":
        feature, threshold, left, right, cover, value = [], [], [], [], [], []

        def add(obj: dict) -> int:
            idx = len(feature)
            is_leaf = "weight" in obj
            feature.append(-1 if is_leaf else int(obj["feature"]))
            threshold.append(0.0 if is_leaf else float(obj["threshold"]))
            left.append(-1)
            right.append(-1)
            cover.append(float(obj["cover"]))
            value.append(float(obj["weight"]) if is_leaf else 0.0)
            if not is_leaf:
                left[idx] = add(obj["left"])
                right[idx] = add(obj["right"])
            return idx

        add(node)
        return cls(
            feature=np.asarray(feature, dtype=np.int64),
            threshold=np.asarray(threshold, dtype=np.float64),
            left=np.asarray(left, dtype=np.int64),
            right=np.asarray(right, dtype=np.int64),
            cover=np.asarray(cover, dtype=np.float64),
            value=np.asarray(value, dtype=np.float64),
        )


@dataclass(eq=False)
class TreeEnsemble:
    """Trained model: ordered trees plus base score and column snapshot."""

    trees: list
    base_score: float
    learning_rate: float
    column_names: tuple
    _packed: tuple = field(default=None, repr=False, compare=False)

    @property
    def n_cols(self) -> int:
        return len(self.column_names)

    @property
    def base_margin(self) -> float:
        return logit(self.base_score)

    def packed(self) -> tuple:
        """Concatenated node arrays with global indices, for the kernels."""
        if self._packed is None:
            roots, feats, thrs, lefts, rights, covers, values = [], [], [], [], [], [], []
            offset = 0
            max_depth = 0
            for tree in self.trees:
                tree.validate(self.n_cols)
                roots.append(offset)
                feats.append(tree.feature)
                thrs.append(tree.threshold)
                shift = np.where(tree.left >= 0, offset, 0)
                lefts.append(tree.left + shift)
                rights.append(tree.right + np.where(tree.right >= 0, offset, 0))
                covers.append(tree.cover)
                values.append(tree.value)
                offset += tree.n_nodes
                max_depth = max(max_depth, tree.depth())
            if offset == 0:
                packed = (np.zeros(0, np.int64),) + tuple(
                    np.zeros(0, dt) for dt in
                    (np.int64, np.float64, np.int64, np.int64, np.float64, np.float64)
                ) + (0,)
            else:
                packed = (
                    np.asarray(roots, dtype=np.int64),
                    np.concatenate(feats),
                    np.concatenate(thrs),
                    np.concatenate(lefts),
                    np.concatenate(rights),
                    np.concatenate(covers),
                    np.concatenate(values),
                    max_depth,
                )
            self._packed = packed
        return self._packed

    def to_json_dict(self) -> dict:
        return {
            "base_score": float(self.base_score),
            "learning_rate": float(self.learning_rate),
            "column_names": list(self.column_names),
            "trees": [tree.to_node_dict() for tree in self.trees],
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "TreeEnsemble":
        model = cls(
            trees=[Tree.from_node_dict(node) for node in obj["trees"]],
            base_score=float(obj["base_score"]),
            learning_rate=float(obj["learning_rate"]),
            column_names=tuple(obj["column_names"]),
        )
        for tree in model.trees:
            tree.validate(model.n_cols)
        return model

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "TreeEnsemble":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json_dict(json.load(fh))


def train(matrix: DesignMatrix, config: TrainConfig, seed: int) -> TreeEnsemble:
    """Train a boosted ensemble on the given matrix.

    Deterministic in (matrix, config, seed); with subsample = colsample = 1
    the seed is never drawn from, so all seeds give identical models.
    """
    X = np.ascontiguousarray(matrix.values, dtype=np.float64)
    y = matrix.labels.astype(np.float64)
    n, p = X.shape
    if n < 2:
        raise TrainingError(f"need at least 2 training rows, got {n}")
    classes = np.unique(matrix.labels)
    if classes.size < 2:
        raise TrainingError("training labels contain a single class")
    if not np.all(np.isfinite(X)):
        raise DataError("training matrix contains non-finite values")
    if seed < 0:
        raise ValidationError(f"seed must be non-negative, got {seed}")

    XT = np.ascontiguousarray(X.T)
    presortT = np.ascontiguousarray(np.argsort(X, axis=0, kind="stable").T)
    rng = np.random.default_rng(seed)

    margins = np.full(n, logit(config.base_score), dtype=np.float64)
    trees = []
    leaf_buf = np.empty(n, dtype=np.float64)

    for _ in range(config.n_rounds):
        prob = sigmoid(margins)
        g = prob - y
        h = prob * (1.0 - prob)

        in_sample = np.ones(n, dtype=np.bool_)
        if config.subsample < 1.0:
            k = max(1, int(math.floor(config.subsample * n)))
            in_sample = np.zeros(n, dtype=np.bool_)
            in_sample[rng.choice(n, size=k, replace=False)] = True
        col_ok = np.ones(p, dtype=np.bool_)
        if config.colsample < 1.0:
            kc = max(1, int(math.floor(config.colsample * p)))
            col_ok = np.zeros(p, dtype=np.bool_)
            col_ok[rng.choice(p, size=kc, replace=False)] = True

        n_sampled = int(in_sample.sum())
        max_nodes = 2 * n_sampled + 1
        if config.max_depth < 60:
            max_nodes = min(max_nodes, 2 ** (config.max_depth + 1) - 1)

        out = _kernels.grow_tree(
            XT, presortT, g, h, in_sample, col_ok,
            config.max_depth, max_nodes,
            config.lam, config.gamma, config.min_child_hessian,
        )
        tree = Tree(
            feature=out[0].copy(), threshold=out[1].copy(),
            left=out[2].copy(), right=out[3].copy(),
            cover=out[4].copy(), value=out[5].copy(),
        )
        trees.append(tree)

        _kernels.tree_leaf_values(X, tree.feature, tree.threshold,
                                  tree.left, tree.right, tree.value, leaf_buf)
        margins += config.learning_rate * leaf_buf

    return TreeEnsemble(
        trees=trees,
        base_score=config.base_score,
        learning_rate=config.learning_rate,
        column_names=matrix.column_names,
    )


def _as_values(rows) -> np.ndarray:
    if isinstance(rows, DesignMatrix):
        return rows.values
    return np.asarray(rows, dtype=np.float64)


def predict_margins(model: TreeEnsemble, rows, tree_limit: int = None) -> np.ndarray:
    """Raw log-odds for a batch of rows, optionally truncating the ensemble."""
    values = np.ascontiguousarray(_as_values(rows), dtype=np.float64)
    if values.ndim != 2 or values.shape[1] != model.n_cols:
        raise DimensionError(
            f"expected rows of length {model.n_cols}, got shape {values.shape}")
    roots, feature, threshold, left, right, _cover, value, _d = model.packed()
    limit = len(roots) if tree_limit is None else min(tree_limit, len(roots))
    out = np.empty(values.shape[0], dtype=np.float64)
    _kernels.predict_margin_batch(values, roots, feature, threshold, left,
                                  right, value, model.learning_rate,
                                  model.base_margin, limit, out)
    return out


def predict_margin(model: TreeEnsemble, row) -> float:
    """Log-odds for a single feature vector."""
    row = np.asarray(row, dtype=np.float64)
    if row.ndim != 1 or row.shape[0] != model.n_cols:
        raise DimensionError(
            f"expected a row of length {model.n_cols}, got shape {row.shape}")
    return float(predict_margins(model, row.reshape(1, -1))[0])


def predict_proba(model: TreeEnsemble, rows) -> np.ndarray:
    """Default probabilities (sigmoid of the margin) aligned to rows."""
    return sigmoid(predict_margins(model, rows))
