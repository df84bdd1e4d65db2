"""Experiment orchestration: N seeded model runs, aggregation and reports.

Each seed drives its own stratified split (the boosting defaults are
otherwise deterministic, so the split is what perturbs the models). A run
is fully deterministic given its configuration: reports are byte-identical
across reruns and worker counts, with wall-clock timings quarantined in
timings.json, which is the one file excluded from the output manifest.
"""

from __future__ import annotations

import concurrent.futures
import csv
import hashlib
import io
import json
import multiprocessing
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import gbdt, metrics, stability, treeshap
from .dataset import CategoryEncoder, DesignMatrix, clean_education, load_dataset, stratified_split
from .errors import ConfigError, ExperimentError, ModelIntegrityError, ValidationError
from .gbdt import TrainConfig, TreeEnsemble
from .metrics import MetricSuite

SHAP_SPLITS = ("test", "train", "all")

ROC_GRID_POINTS = 201
KS_HISTOGRAM_BINS = 15

# Default feature subgroups, resolved against encoded column names by prefix.
_DEFAULT_SUBGROUP_PREFIXES = {
    "pay_status": tuple(f"pay_{i}_" for i in range(1, 7)),
    "bill_amount": tuple(f"bill_amt{i}" for i in range(1, 7)),
    "pay_amount": tuple(f"pay_amt{i}" for i in range(1, 7)),
}

_CONFIG_KEYS = {
    "data_path", "n_models", "seed_base", "train_fraction", "train",
    "threshold", "shap_split", "output_dir", "subgroups",
}
_TRAIN_KEYS = {
    "n_rounds", "learning_rate", "max_depth", "lam", "gamma",
    "min_child_hessian", "subsample", "colsample", "base_score",
}


@dataclass(frozen=True)
class ExperimentConfig:
    data_path: str
    output_dir: str = ""
    n_models: int = 100
    seed_base: int = 0
    train_fraction: float = 0.7
    train: TrainConfig = field(default_factory=TrainConfig)
    threshold: float = 0.5
    shap_split: str = "test"
    subgroups: dict = None      # name -> list of column names; None = auto

    def __post_init__(self):
        if self.n_models < 2:
            raise ConfigError(f"n_models must be >= 2, got {self.n_models}")
        if self.seed_base < 0:
            raise ConfigError(f"seed_base must be >= 0, got {self.seed_base}")
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError(
                f"train_fraction must be in (0, 1), got {self.train_fraction}")
        if self.shap_split not in SHAP_SPLITS:
            raise ConfigError(
                f"shap_split must be one of {SHAP_SPLITS}, got {self.shap_split!r}")

    def validate_paths(self) -> None:
        if not os.path.isfile(self.data_path):
            raise ConfigError(f"data file not found: {self.data_path}")

    def to_dict(self) -> dict:
        return {
            "data_path": self.data_path,
            "output_dir": self.output_dir,
            "n_models": self.n_models,
            "seed_base": self.seed_base,
            "train_fraction": self.train_fraction,
            "train": self.train.to_dict(),
            "threshold": self.threshold,
            "shap_split": self.shap_split,
            "subgroups": self.subgroups,
        }

    def canonical_dict(self) -> dict:
        """Experiment identity: every field except where outputs land."""
        out = self.to_dict()
        del out["output_dir"]
        return out

    def digest(self) -> str:
        canonical = json.dumps(self.canonical_dict(), sort_keys=True,
                               separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    @classmethod
    def from_dict(cls, obj: dict) -> "ExperimentConfig":
        if not isinstance(obj, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(obj) - _CONFIG_KEYS
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(sorted(unknown))}")
        if "data_path" not in obj:
            raise ConfigError("config is missing required key 'data_path'")
        train_obj = obj.get("train", {})
        if not isinstance(train_obj, dict):
            raise ConfigError("'train' must be a JSON object")
        unknown = set(train_obj) - _TRAIN_KEYS
        if unknown:
            raise ConfigError(f"unknown train key(s): {', '.join(sorted(unknown))}")
        subgroups = obj.get("subgroups")
        if subgroups is not None:
            if not isinstance(subgroups, dict) or not all(
                    isinstance(v, list) for v in subgroups.values()):
                raise ConfigError("'subgroups' must map names to column-name lists")
        try:
            train = TrainConfig(**train_obj)
        except ValidationError as exc:
            raise ConfigError(str(exc)) from exc
        return cls(
            data_path=obj["data_path"],
            output_dir=obj.get("output_dir", ""),
            n_models=obj.get("n_models", 100),
            seed_base=obj.get("seed_base", 0),
            train_fraction=obj.get("train_fraction", 0.7),
            train=train,
            threshold=obj.get("threshold", 0.5),
            shap_split=obj.get("shap_split", "test"),
            subgroups=subgroups,
        )

    @classmethod
    def from_json_file(cls, path) -> "ExperimentConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(obj)


@dataclass(frozen=True)
class MetricAggregate:
    median: float
    lower: float
    upper: float
    n_undefined: int

    def to_dict(self) -> dict:
        return {"median": self.median, "lower": self.lower,
                "upper": self.upper, "n_undefined": self.n_undefined}


@dataclass(eq=False)
class ModelResult:
    """Everything retained from one seeded model run."""

    seed: int
    ks: float
    decile_table: metrics.DecileTable
    confusion: metrics.ConfusionCounts
    suite: MetricSuite
    importance: np.ndarray          # per-feature sum of |phi|
    roc_fpr: np.ndarray             # on the shared flag-rate grid
    roc_tpr: np.ndarray

    def importance_digest(self) -> str:
        payload = ",".join(repr(float(v)) for v in self.importance)
        return hashlib.sha256(payload.encode("ascii")).hexdigest()


@dataclass(eq=False)
class RunSummary:
    config: ExperimentConfig
    feature_names: tuple
    per_model: list                 # ModelResult, ascending seed
    aggregates: dict                # metric name -> MetricAggregate
    rank_matrix: stability.RankMatrix
    concordance_all: stability.ConcordanceReport
    concordance_subgroups: dict     # name -> ConcordanceReport
    rank_frequency: stability.RankFrequencyTable
    timings: dict                   # stage -> seconds; excluded from digests

    def to_json_dict(self) -> dict:
        """Deterministic summary payload (timings intentionally omitted)."""
        return {
            "config_digest": self.config.digest(),
            "config": self.config.canonical_dict(),
            "n_models": len(self.per_model),
            "feature_names": list(self.feature_names),
            "per_model": [
                {
                    "seed": r.seed,
                    "ks": r.ks,
                    "metrics": r.suite.to_dict(),
                    "confusion": {"tp": r.confusion.tp, "fp": r.confusion.fp,
                                  "tn": r.confusion.tn, "fn": r.confusion.fn,
                                  "threshold": r.confusion.threshold},
                    "importance_digest": r.importance_digest(),
                }
                for r in self.per_model
            ],
            "aggregates": {k: v.to_dict() for k, v in sorted(self.aggregates.items())},
            "concordance": {
                "all_features": self.concordance_all.to_dict(),
                "subgroups": {k: v.to_dict()
                              for k, v in sorted(self.concordance_subgroups.items())},
            },
            "rank_summary": [
                {"feature": e.feature, "unique_ranks": e.unique_ranks,
                 "min_rank": e.min_rank, "max_rank": e.max_rank,
                 "mean_rank": e.mean_rank}
                for e in self.rank_frequency.stats
            ],
        }


def resolve_subgroups(config: ExperimentConfig, column_names) -> dict:
    """Map subgroup names to column-index lists.

    Configured subgroups must name existing columns. Auto subgroups match
    the credit-data prefixes and silently drop groups with fewer than two
    matching columns (so synthetic schemas still run).
    """
    name_to_index = {name: i for i, name in enumerate(column_names)}
    if config.subgroups is not None:
        resolved = {}
        for group, cols in config.subgroups.items():
            missing = [c for c in cols if c not in name_to_index]
            if missing:
                raise ConfigError(
                    f"subgroup {group!r} names unknown column(s): {missing}")
            resolved[group] = [name_to_index[c] for c in cols]
        return resolved
    resolved = {}
    for group, prefixes in _DEFAULT_SUBGROUP_PREFIXES.items():
        indices = [i for i, name in enumerate(column_names)
                   if name.startswith(prefixes)]
        if len(indices) >= 2:
            resolved[group] = indices
    return resolved


def _roc_grid(scores, labels) -> tuple:
    """(fpr, tpr) when flagging the top q fraction by score, q on a fixed grid."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n = len(scores)
    order = np.argsort(-scores, kind="stable")
    cum_tp = np.concatenate([[0], np.cumsum(labels[order])])
    n_pos = int(labels.sum())
    n_neg = n - n_pos
    grid = np.linspace(0.0, 1.0, ROC_GRID_POINTS)
    cut = np.rint(grid * n).astype(np.int64)
    tp = cum_tp[cut]
    fp = cut - tp
    return fp / max(n_neg, 1), tp / max(n_pos, 1)


def run_model(matrix: DesignMatrix, config: ExperimentConfig, seed: int) -> ModelResult:
    """One seeded split -> train -> evaluate -> attribute cycle."""
    split = stratified_split(matrix, seed, config.train_fraction)
    train_view = matrix.take(split.train_rows)
    test_view = matrix.take(split.test_rows)

    model = gbdt.train(train_view, config.train, seed)
    scores = gbdt.predict_proba(model, test_view)

    decile_table, ks = metrics.decile_ks(scores, test_view.labels)
    confusion, suite = metrics.confusion_at_threshold(
        scores, test_view.labels, config.threshold)
    suite = suite.completed(auroc=metrics.auroc(scores, test_view.labels), ks=ks)

    eval_view = {"test": test_view, "train": train_view, "all": matrix}[config.shap_split]
    attributions = treeshap.shap_matrix(
        model, eval_view, model_id=f"seed={seed}", eval_id=config.shap_split)
    gap = np.max(np.abs(attributions.base_value + attributions.phi.sum(axis=1)
                        - gbdt.predict_margins(model, eval_view)))
    if gap > 1e-6:
        raise ModelIntegrityError(
            f"seed {seed}: attribution additivity violated (gap {gap:.3e})")
    importance = treeshap.global_importance(attributions)

    fpr, tpr = _roc_grid(scores, test_view.labels)
    return ModelResult(
        seed=seed, ks=ks, decile_table=decile_table, confusion=confusion,
        suite=suite, importance=importance.scores.copy(),
        roc_fpr=fpr, roc_tpr=tpr,
    )


_WORKER_STATE = {}


def _init_worker(matrix_values, column_names, labels, config_dict):
    _WORKER_STATE["matrix"] = DesignMatrix(
        values=matrix_values, column_names=column_names, labels=labels)
    _WORKER_STATE["config"] = ExperimentConfig.from_dict(config_dict)


def _worker_run(seed: int):
    try:
        return seed, run_model(_WORKER_STATE["matrix"], _WORKER_STATE["config"], seed), None
    except Exception as exc:  # reported per seed, then the whole run fails
        return seed, None, f"{type(exc).__name__}: {exc}"


def aggregate_metrics(per_model) -> dict:
    """Median and empirical 2.5/97.5 percentiles per metric.

    Undefined (None) values are excluded and counted; a metric undefined in
    every model aggregates to all-None with the count preserved.
    """
    if len(per_model) < 2:
        raise ValidationError(
            f"aggregation needs at least 2 model results, got {len(per_model)}")
    out = {}
    for name in MetricSuite.FIELDS:
        raw = [getattr(suite, name) for suite in per_model]
        defined = np.asarray([v for v in raw if v is not None], dtype=np.float64)
        n_undefined = len(raw) - len(defined)
        if len(defined) == 0:
            out[name] = MetricAggregate(None, None, None, n_undefined)
            continue
        lower, upper = np.percentile(defined, [2.5, 97.5])
        out[name] = MetricAggregate(
            median=float(np.median(defined)),
            lower=float(lower),
            upper=float(upper),
            n_undefined=n_undefined,
        )
    return out


def run_experiment(config: ExperimentConfig, workers: int = 1) -> RunSummary:
    """Run the full N-seed study; writes reports when output_dir is set.

    Any model-run failure is recorded and the experiment raises after all
    seeds finish, so partial aggregates are never produced.
    """
    timings = {}
    t0 = time.perf_counter()
    config.validate_paths()

    raw = clean_education(load_dataset(config.data_path))
    encoder = CategoryEncoder().fit(raw)
    matrix = encoder.transform(raw)
    timings["prepare_s"] = time.perf_counter() - t0

    subgroup_indices = resolve_subgroups(config, matrix.column_names)
    seeds = [config.seed_base + k for k in range(config.n_models)]

    t0 = time.perf_counter()
    results = {}
    failures = []
    if workers <= 1:
        for seed in seeds:
            seed, result, error = _run_seed_inline(matrix, config, seed)
            if error is None:
                results[seed] = result
            else:
                failures.append((seed, error))
    else:
        # spawn, not fork: the numba threading layer is not fork-safe once
        # a parallel kernel has run in the parent
        ctx = multiprocessing.get_context("spawn")
        with concurrent.futures.ProcessPoolExecutor(
                max_workers=workers, mp_context=ctx,
                initializer=_init_worker,
                initargs=(matrix.values, matrix.column_names, matrix.labels,
                          config.to_dict())) as pool:
            for seed, result, error in pool.map(_worker_run, seeds):
                if error is None:
                    results[seed] = result
                else:
                    failures.append((seed, error))
    timings["model_runs_s"] = time.perf_counter() - t0

    if failures:
        detail = "; ".join(f"seed {seed}: {err}" for seed, err in failures)
        raise ExperimentError(
            f"{len(failures)} of {len(seeds)} model runs failed: {detail}",
            failures=failures)

    t0 = time.perf_counter()
    per_model = [results[seed] for seed in seeds]
    importances = [
        treeshap.GlobalImportance(scores=r.importance,
                                  feature_names=matrix.column_names)
        for r in per_model
    ]
    rank_matrix = stability.rank_features(importances, model_ids=seeds)
    summary = RunSummary(
        config=config,
        feature_names=matrix.column_names,
        per_model=per_model,
        aggregates=aggregate_metrics([r.suite for r in per_model]),
        rank_matrix=rank_matrix,
        concordance_all=stability.full_concordance(rank_matrix),
        concordance_subgroups=stability.subgroup_concordance(
            rank_matrix, subgroup_indices),
        rank_frequency=stability.rank_frequency(rank_matrix),
        timings=timings,
    )
    timings["aggregate_s"] = time.perf_counter() - t0

    if config.output_dir:
        emit_reports(summary, config.output_dir)
    return summary


def _run_seed_inline(matrix, config, seed):
    try:
        return seed, run_model(matrix, config, seed), None
    except Exception as exc:
        return seed, None, f"{type(exc).__name__}: {exc}"


def _json_bytes(obj) -> bytes:
    return (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode("utf-8")


def _r(x) -> str:
    return repr(float(x))


def emit_reports(summary: RunSummary, out_dir) -> dict:
    """Write every report and plot-data file; return the digest manifest.

    timings.json is listed as informational and excluded from digests so
    reruns of the same config stay byte-identical.
    """
    os.makedirs(out_dir, exist_ok=True)
    digest = summary.config.digest()
    names = summary.feature_names
    per_model = summary.per_model
    written = []

    def emit(name: str, payload: bytes):
        path = os.path.join(out_dir, name)
        with open(path, "wb") as fh:
            fh.write(payload)
        written.append((name, payload))

    emit("resolved_config.json", _json_bytes(summary.config.canonical_dict()))
    emit("summary.json", _json_bytes(summary.to_json_dict()))

    rows = [["seed"] + list(MetricSuite.FIELDS)]
    for r in per_model:
        suite = r.suite.to_dict()
        rows.append([str(r.seed)] + ["" if suite[k] is None else _r(suite[k])
                                     for k in MetricSuite.FIELDS])
    emit("per_model_metrics.csv", _csv_bytes(rows))

    rows = [["seed"] + list(metrics.DecileTable.HEADER)]
    for r in per_model:
        collector = _RowCollector(rows, prefix=(str(r.seed),))
        r.decile_table.write_rows(collector)
    emit("decile_tables.csv", _csv_bytes(rows))

    rows = [["seed"] + list(names)]
    for r in per_model:
        rows.append([str(r.seed)] + [_r(v) for v in r.importance])
    emit("importances.csv", _csv_bytes(rows))

    rows = [["model"] + list(names)]
    for i, r in enumerate(per_model):
        rows.append([str(r.seed)] + [str(int(v)) for v in summary.rank_matrix.ranks[i]])
    emit("rank_matrix.csv", _csv_bytes(rows, comment=f"# config_digest={digest}"))

    emit("rank_frequency.json", _json_bytes(
        {"config_digest": digest, **summary.rank_frequency.to_dict()}))
    emit("concordance.json", _json_bytes({
        "config_digest": digest,
        "all_features": summary.concordance_all.to_dict(),
        "subgroups": {k: v.to_dict()
                      for k, v in sorted(summary.concordance_subgroups.items())},
    }))

    ks_values = np.asarray([r.ks for r in per_model], dtype=np.float64)
    lo, hi = float(ks_values.min()), float(ks_values.max())
    if hi == lo:
        hi = lo + 1e-9
    counts, edges = np.histogram(ks_values, bins=KS_HISTOGRAM_BINS, range=(lo, hi))
    rows = [["bin_left", "bin_right", "count"]]
    for b in range(KS_HISTOGRAM_BINS):
        rows.append([_r(edges[b]), _r(edges[b + 1]), str(int(counts[b]))])
    emit("ks_histogram.csv", _csv_bytes(rows))

    rows = [["seed", "metric", "value"]]
    for r in per_model:
        suite = r.suite.to_dict()
        for k in MetricSuite.FIELDS:
            rows.append([str(r.seed), k, "" if suite[k] is None else _r(suite[k])])
    emit("metric_distributions.csv", _csv_bytes(rows))

    grid = np.linspace(0.0, 1.0, ROC_GRID_POINTS)
    rows = [["seed", "flag_rate", "fpr", "tpr"]]
    for r in per_model:
        for q, f, t in zip(grid, r.roc_fpr, r.roc_tpr):
            rows.append([str(r.seed), _r(q), _r(f), _r(t)])
    emit("roc_curves.csv", _csv_bytes(rows))

    rows = [["feature", "mean_rank", "min_rank", "max_rank", "unique_ranks"]]
    for e in summary.rank_frequency.stats:
        rows.append([e.feature, _r(e.mean_rank), str(e.min_rank),
                     str(e.max_rank), str(e.unique_ranks)])
    emit("unique_rank_counts.csv", _csv_bytes(rows))

    timings_payload = _json_bytes(summary.timings)
    with open(os.path.join(out_dir, "timings.json"), "wb") as fh:
        fh.write(timings_payload)

    manifest = {
        "config_digest": digest,
        "files": [
            {"path": name, "sha256": hashlib.sha256(payload).hexdigest(),
             "bytes": len(payload)}
            for name, payload in sorted(written)
        ],
        "informational": ["timings.json", "manifest.json"],
    }
    with open(os.path.join(out_dir, "manifest.json"), "wb") as fh:
        fh.write(_json_bytes(manifest))
    return manifest


class _RowCollector:
    """csv.writer-compatible sink that prefixes each row (e.g. with a seed)."""

    def __init__(self, rows, prefix=()):
        self.rows = rows
        self.prefix = list(prefix)

    def writerow(self, row):
        self.rows.append(self.prefix + [str(v) for v in row])


def _csv_bytes(rows, comment: str = "") -> bytes:
    buf = io.StringIO()
    if comment:
        buf.write(comment + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    for row in rows:
        writer.writerow(row)
    return buf.getvalue().encode("utf-8")
