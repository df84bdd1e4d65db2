"""Credit-card default dataset ingestion, cleaning, encoding and splitting.

The raw CSV has 23 candidate features per account: 14 numeric columns that
pass straight through to the model matrix and 9 categorical columns (sex,
education, marriage and six monthly repayment-status codes) that are one-hot
encoded on the categories observed in the data.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateSplitError,
    EncodingError,
    IntegrityError,
    ParseError,
    SchemaError,
    ValidationError,
)

logger = logging.getLogger(__name__)

# Numeric passthrough columns, in original table order.
NUMERIC_COLUMNS = (
    "limit_bal",
    "age",
    "bill_amt1", "bill_amt2", "bill_amt3", "bill_amt4", "bill_amt5", "bill_amt6",
    "pay_amt1", "pay_amt2", "pay_amt3", "pay_amt4", "pay_amt5", "pay_amt6",
)

# Categorical columns, in original table order.
CATEGORICAL_COLUMNS = (
    "sex", "education", "marriage",
    "pay_1", "pay_2", "pay_3", "pay_4", "pay_5", "pay_6",
)

FEATURE_COLUMNS = NUMERIC_COLUMNS + CATEGORICAL_COLUMNS

ID_COLUMN = "id"
LABEL_COLUMN = "label"

# Accepted spellings of the label column after normalization.
_LABEL_ALIASES = ("default_payment_next_month", "label")

# Merged education category: codes 0, 4, 5 and 6 all mean "other/unknown"
# and are collapsed onto code 0, rendered as education_other when encoded.
EDUCATION_OTHER = 0
_EDUCATION_MERGE = frozenset({0, 4, 5, 6})
_EDUCATION_VALID = frozenset(range(7))

_PAY_STATUS_MIN, _PAY_STATUS_MAX = -2, 9


@dataclass(frozen=True)
class RawTable:
    """Parsed raw dataset: one int64 column per feature, aligned labels."""

    ids: np.ndarray                 # object array of id strings
    columns: dict                   # feature name -> int64 array
    labels: np.ndarray              # int64, values in {0, 1}

    def __post_init__(self):
        self.ids.setflags(write=False)
        self.labels.setflags(write=False)
        for arr in self.columns.values():
            arr.setflags(write=False)

    @property
    def n_rows(self) -> int:
        return len(self.labels)

    def column(self, name: str) -> np.ndarray:
        return self.columns[name]

    def with_column(self, name: str, values: np.ndarray) -> "RawTable":
        """Return a copy with one feature column replaced."""
        cols = dict(self.columns)
        cols[name] = np.asarray(values, dtype=np.int64)
        return RawTable(ids=self.ids, columns=cols, labels=self.labels)


@dataclass(frozen=True)
class DesignMatrix:
    """Encoded numeric feature matrix with aligned binary labels."""

    values: np.ndarray              # (n_rows, n_cols) float64, C order
    column_names: tuple
    labels: np.ndarray              # (n_rows,) int64

    def __post_init__(self):
        if self.values.ndim != 2:
            raise ValidationError("design matrix values must be 2-D")
        if self.values.shape[0] != len(self.labels):
            raise ValidationError("labels are not aligned to matrix rows")
        if self.values.shape[1] != len(self.column_names):
            raise ValidationError("column_names do not match matrix width")
        if len(set(self.column_names)) != len(self.column_names):
            raise ValidationError("column_names must be unique")
        self.values.setflags(write=False)
        self.labels.setflags(write=False)

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_cols(self) -> int:
        return self.values.shape[1]

    def take(self, rows: np.ndarray) -> "DesignMatrix":
        """Row-subset copy (used for train/test/evaluation views)."""
        rows = np.asarray(rows, dtype=np.int64)
        return DesignMatrix(
            values=np.ascontiguousarray(self.values[rows]),
            column_names=self.column_names,
            labels=self.labels[rows].copy(),
        )

    def to_csv(self, path) -> None:
        """Dump the encoded matrix (plus label) for inspection."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(list(self.column_names) + [LABEL_COLUMN])
            for i in range(self.n_rows):
                writer.writerow([repr(float(v)) for v in self.values[i]]
                                + [int(self.labels[i])])


@dataclass(frozen=True)
class SplitIndices:
    """Stratified train/test row indices for one seed."""

    train_rows: np.ndarray
    test_rows: np.ndarray
    seed: int
    train_fraction: float

    def __post_init__(self):
        self.train_rows.setflags(write=False)
        self.test_rows.setflags(write=False)


def _normalize_header(name: str) -> str:
    return name.strip().lstrip("﻿").lower().replace(".", "_")


def _resolve_header(raw_header) -> dict:
    """Map canonical column name -> CSV position, or raise SchemaError."""
    seen = {}
    for pos, raw_name in enumerate(raw_header):
        name = _normalize_header(raw_name)
        if name == "pay_0":
            name = "pay_1"          # older header convention for September
        if name in _LABEL_ALIASES:
            name = LABEL_COLUMN
        if name in seen:
            raise SchemaError(f"duplicate column {name!r} in header")
        seen[name] = pos

    expected = set(FEATURE_COLUMNS) | {ID_COLUMN, LABEL_COLUMN}
    missing = expected - set(seen)
    extra = set(seen) - expected
    if missing:
        raise SchemaError(f"missing column(s): {', '.join(sorted(missing))}")
    if extra:
        raise SchemaError(f"unexpected column(s): {', '.join(sorted(extra))}")
    return seen


def _parse_int(cell: str, row_index: int, column: str) -> int:
    text = cell.strip()
    try:
        return int(text)
    except ValueError:
        pass
    try:
        value = float(text)
    except ValueError:
        raise ParseError(
            f"row {row_index}: non-numeric value {cell!r} in column {column!r}"
        ) from None
    if not value.is_integer():
        raise ParseError(
            f"row {row_index}: non-integer value {cell!r} in column {column!r}"
        )
    return int(value)


def load_dataset(path) -> RawTable:
    """Parse the raw CSV into a RawTable, validating schema and cell values.

    Accepts either repayment-status header convention (pay_0/pay_2..pay_6 or
    pay_1..pay_6); columns are matched by name, not position.
    """
    with open(path, newline="", encoding="utf-8-sig") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise SchemaError(f"{path}: empty file, no header row")
        positions = _resolve_header(header)
        n_fields = len(header)

        ids = []
        data = {name: [] for name in FEATURE_COLUMNS}
        labels = []
        for row_index, row in enumerate(reader):
            if len(row) != n_fields:
                raise ParseError(
                    f"row {row_index}: expected {n_fields} fields, got {len(row)}"
                )
            ids.append(row[positions[ID_COLUMN]].strip())
            for name in FEATURE_COLUMNS:
                data[name].append(_parse_int(row[positions[name]], row_index, name))
            label = _parse_int(row[positions[LABEL_COLUMN]], row_index, LABEL_COLUMN)
            if label not in (0, 1):
                raise ValidationError(f"row {row_index}: label must be 0 or 1, got {label}")
            labels.append(label)

    columns = {name: np.asarray(vals, dtype=np.int64) for name, vals in data.items()}
    labels = np.asarray(labels, dtype=np.int64)

    _validate_ranges(columns)
    _check_unique_ids(ids)

    table = RawTable(
        ids=np.asarray(ids, dtype=object),
        columns=columns,
        labels=labels,
    )
    n_default = int(labels.sum())
    logger.info(
        "loaded %d rows: %d non-default / %d default",
        table.n_rows, table.n_rows - n_default, n_default,
    )
    return table


def _validate_ranges(columns: dict) -> None:
    for month in range(1, 7):
        name = f"pay_amt{month}"
        bad = np.flatnonzero(columns[name] < 0)
        if bad.size:
            raise ValidationError(
                f"row {bad[0]}: negative payment amount in column {name!r}"
            )
        name = f"pay_{month}"
        codes = columns[name]
        bad = np.flatnonzero((codes < _PAY_STATUS_MIN) | (codes > _PAY_STATUS_MAX))
        if bad.size:
            raise ValidationError(
                f"row {bad[0]}: repayment status {codes[bad[0]]} out of range "
                f"[{_PAY_STATUS_MIN}, {_PAY_STATUS_MAX}] in column {name!r}"
            )


def _check_unique_ids(ids) -> None:
    seen = {}
    for row_index, value in enumerate(ids):
        if value in seen:
            raise IntegrityError(
                f"duplicate id {value!r} at rows {seen[value]} and {row_index}"
            )
        seen[value] = row_index


def clean_education(raw: RawTable) -> RawTable:
    """Collapse education codes {0, 4, 5, 6} onto the single 'other' category.

    Codes 1 (graduate school), 2 (university) and 3 (high school) pass
    through unchanged; every other field is untouched.
    """
    codes = raw.column("education")
    bad = np.flatnonzero(~np.isin(codes, list(_EDUCATION_VALID)))
    if bad.size:
        raise ValidationError(
            f"row {bad[0]}: education code {codes[bad[0]]} outside 0..6"
        )
    merged = np.where(np.isin(codes, list(_EDUCATION_MERGE)), EDUCATION_OTHER, codes)
    n_merged = int(np.isin(codes, list(_EDUCATION_MERGE)).sum())
    logger.info("education: merged %d rows (%.2f%%) into 'other'",
                n_merged, 100.0 * n_merged / max(raw.n_rows, 1))
    return raw.with_column("education", merged)


def _category_column_name(variable: str, code: int) -> str:
    if variable == "education" and code == EDUCATION_OTHER:
        return "education_other"
    return f"{variable}_{code}"


class CategoryEncoder:
    """One-hot encoder over the categories observed at fit time.

    The full category expansion is kept (no dropped reference level), so
    every one-hot group sums to exactly 1 per row. Numeric columns pass
    through first, in original order; indicator blocks follow in variable
    order with categories ascending.
    """

    def __init__(self):
        self.categories = None      # variable -> sorted tuple of codes

    def fit(self, raw: RawTable) -> "CategoryEncoder":
        education = raw.column("education")
        stray = set(np.unique(education)) - {EDUCATION_OTHER, 1, 2, 3}
        if stray:
            raise ValidationError(
                "education codes %s present: clean_education must run before encoding"
                % sorted(stray)
            )
        self.categories = {
            var: tuple(int(c) for c in np.unique(raw.column(var)))
            for var in CATEGORICAL_COLUMNS
        }
        return self

    @property
    def column_names(self) -> tuple:
        self._require_fit()
        names = list(NUMERIC_COLUMNS)
        for var in CATEGORICAL_COLUMNS:
            names.extend(_category_column_name(var, c) for c in self.categories[var])
        return tuple(names)

    def transform(self, raw: RawTable) -> DesignMatrix:
        self._require_fit()
        n = raw.n_rows
        blocks = [raw.column(name).astype(np.float64).reshape(n, 1)
                  for name in NUMERIC_COLUMNS]
        for var in CATEGORICAL_COLUMNS:
            cats = self.categories[var]
            codes = raw.column(var)
            unseen = np.flatnonzero(~np.isin(codes, cats))
            if unseen.size:
                raise EncodingError(
                    f"variable {var!r}: value {codes[unseen[0]]} was never "
                    f"observed during fit"
                )
            block = np.zeros((n, len(cats)), dtype=np.float64)
            for j, cat in enumerate(cats):
                block[:, j] = codes == cat
            blocks.append(block)
        values = np.ascontiguousarray(np.hstack(blocks)) if n else \
            np.zeros((0, len(self.column_names)), dtype=np.float64)
        return DesignMatrix(
            values=values,
            column_names=self.column_names,
            labels=raw.labels.copy(),
        )

    def schema_report(self, matrix: DesignMatrix) -> dict:
        """Encoding summary for the run report (column list, category maps)."""
        self._require_fit()
        labels = matrix.labels
        return {
            "n_rows": matrix.n_rows,
            "n_cols": matrix.n_cols,
            "numeric_columns": list(NUMERIC_COLUMNS),
            "categories": {var: list(cats) for var, cats in self.categories.items()},
            "column_names": list(matrix.column_names),
            "label_counts": {
                "0": int((labels == 0).sum()),
                "1": int((labels == 1).sum()),
            },
        }

    def _require_fit(self):
        if self.categories is None:
            raise ValidationError("encoder has not been fit")


def one_hot_encode(raw: RawTable) -> DesignMatrix:
    """Fit-and-transform convenience wrapper around CategoryEncoder."""
    encoder = CategoryEncoder().fit(raw)
    matrix = encoder.transform(raw)
    logger.info("encoded %d rows into %d columns", matrix.n_rows, matrix.n_cols)
    return matrix


def stratified_split(matrix: DesignMatrix, seed: int,
                     train_fraction: float = 0.7) -> SplitIndices:
    """Seeded stratified train/test split over the matrix rows.

    Deterministic in (seed, train_fraction, row order). Per-class train
    counts are allocated by largest remainder so each class proportion in
    both splits stays within one row of the global proportion.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValidationError(f"train_fraction must be in (0, 1), got {train_fraction}")
    if seed < 0:
        raise ValidationError(f"seed must be non-negative, got {seed}")
    n = matrix.n_rows
    if n < 10:
        raise ValidationError(f"need at least 10 rows to split, got {n}")

    labels = matrix.labels
    classes = [0, 1]
    class_rows = {c: np.flatnonzero(labels == c) for c in classes}
    if any(rows.size == 0 for rows in class_rows.values()):
        raise DegenerateSplitError("both classes must be present before splitting")

    total_train = int(round(train_fraction * n))
    targets = {c: train_fraction * class_rows[c].size for c in classes}
    counts = {c: int(np.floor(targets[c])) for c in classes}
    leftover = total_train - sum(counts.values())
    # Largest remainder first; ties resolved by ascending class value.
    order = sorted(classes, key=lambda c: (-(targets[c] - counts[c]), c))
    for c in order[:leftover]:
        counts[c] += 1

    for c in classes:
        if counts[c] == 0 or counts[c] == class_rows[c].size:
            raise DegenerateSplitError(
                f"train_fraction {train_fraction} leaves class {c} absent "
                "from one side of the split"
            )

    rng = np.random.default_rng(seed)
    train_parts, test_parts = [], []
    for c in classes:
        shuffled = rng.permutation(class_rows[c])
        train_parts.append(shuffled[:counts[c]])
        test_parts.append(shuffled[counts[c]:])

    return SplitIndices(
        train_rows=np.sort(np.concatenate(train_parts)),
        test_rows=np.sort(np.concatenate(test_parts)),
        seed=seed,
        train_fraction=train_fraction,
    )
