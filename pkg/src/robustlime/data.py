"""Tabular schemas, datasets, CSV ingestion, and split/augmentation utilities.

A dataset is a feature matrix plus a label vector. Discrete cells hold
category indices (stored as floats alongside the continuous columns);
category strings only exist at the CSV boundary.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

CONTINUOUS = "continuous"
DISCRETE = "discrete"


class SchemaError(ValueError):
    """A schema document is malformed or does not match the data."""


class ValidationError(ValueError):
    """Rows violate the schema (unknown category, bad cell, empty body)."""


@dataclass(frozen=True)
class Column:
    name: str
    kind: str
    categories: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.kind not in (CONTINUOUS, DISCRETE):
            raise SchemaError(f"column {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == DISCRETE:
            if not self.categories:
                raise SchemaError(f"discrete column {self.name!r} needs categories")
            if len(set(self.categories)) != len(self.categories):
                raise SchemaError(f"column {self.name!r}: duplicate categories")
        elif self.categories is not None:
            raise SchemaError(f"continuous column {self.name!r} must not list categories")


@dataclass(frozen=True)
class Schema:
    """Ordered columns (features plus the label column) and role designations."""

    columns: tuple[Column, ...]
    sensitive_feature: str
    label: str

    def __post_init__(self):
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise SchemaError("column names must be unique")
        if self.label not in names:
            raise SchemaError(f"label column {self.label!r} not in columns")
        if self.sensitive_feature not in names:
            raise SchemaError(f"sensitive feature {self.sensitive_feature!r} not in columns")
        if self.column(self.label).kind != DISCRETE:
            raise SchemaError("label column must be discrete")
        if len(self.column(self.label).categories) < 2:
            raise SchemaError("label column needs >= 2 classes")

    def column(self, name: str) -> Column:
        for c in self.columns:
            if c.name == name:
                return c
        raise KeyError(name)

    @property
    def feature_columns(self) -> tuple[Column, ...]:
        return tuple(c for c in self.columns if c.name != self.label)

    @property
    def feature_names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.feature_columns)

    def feature_index(self, name: str) -> int:
        return self.feature_names.index(name)

    @property
    def label_categories(self) -> tuple[str, ...]:
        return self.column(self.label).categories

    def to_json(self) -> dict:
        cols = []
        for c in self.columns:
            entry = {"name": c.name, "kind": c.kind}
            if c.kind == DISCRETE:
                entry["categories"] = list(c.categories)
            cols.append(entry)
        return {
            "columns": cols,
            "sensitive_feature": self.sensitive_feature,
            "label": self.label,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "Schema":
        try:
            columns = tuple(
                Column(
                    name=c["name"],
                    kind=c["kind"],
                    categories=tuple(c["categories"]) if c.get("categories") else None,
                )
                for c in doc["columns"]
            )
            return cls(
                columns=columns,
                sensitive_feature=doc["sensitive_feature"],
                label=doc["label"],
            )
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"bad schema document: {exc}") from exc


def load_schema(path) -> Schema:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"schema file {path} does not parse: {exc}") from exc
    return Schema.from_json(doc)


def save_schema(schema: Schema, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(schema.to_json(), fh, indent=2, sort_keys=True)
        fh.write("\n")


@dataclass(frozen=True)
class Dataset:
    """Feature matrix (discrete cells as category indices) plus class labels."""

    schema: Schema
    rows: np.ndarray = field(repr=False)
    labels: np.ndarray = field(repr=False)

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "labels", labels)
        if rows.ndim != 2 or rows.shape[1] != len(self.schema.feature_columns):
            raise ValidationError(
                f"rows shape {rows.shape} does not match {len(self.schema.feature_columns)} feature columns"
            )
        if len(labels) != len(rows):
            raise ValidationError("rows and labels must have equal length")
        n_classes = len(self.schema.label_categories)
        if len(labels) and (labels.min() < 0 or labels.max() >= n_classes):
            raise ValidationError("label index out of range")
        for j, col in enumerate(self.schema.feature_columns):
            vals = rows[:, j]
            if not np.all(np.isfinite(vals)):
                raise ValidationError(f"non-finite value in column {col.name!r}")
            if col.kind == DISCRETE:
                if len(vals) and (
                    np.any(vals != np.round(vals))
                    or vals.min() < 0
                    or vals.max() >= len(col.categories)
                ):
                    raise ValidationError(f"category index out of range in column {col.name!r}")

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def n_features(self) -> int:
        return self.rows.shape[1]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.schema, self.rows[idx], self.labels[idx])


def load_dataset(path, schema_path) -> Dataset:
    """Read a header CSV against a schema JSON document.

    Discrete cells are mapped to category indices; continuous cells must be
    numeric. Rows with missing cells are rejected.
    """
    schema = load_schema(schema_path)
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError(f"{path}: empty file, header row required") from None
        positions = {}
        for col in schema.columns:
            if col.name not in header:
                raise SchemaError(f"{path}: column {col.name!r} missing from CSV header")
            positions[col.name] = header.index(col.name)

        feature_cols = schema.feature_columns
        label_col = schema.column(schema.label)
        label_lookup = {c: i for i, c in enumerate(label_col.categories)}
        cat_lookup = {
            c.name: {cat: i for i, cat in enumerate(c.categories)}
            for c in feature_cols
            if c.kind == DISCRETE
        }

        rows, labels = [], []
        for r, record in enumerate(reader):
            if len(record) < len(header):
                raise ValidationError(f"{path}: row {r}: expected {len(header)} cells")
            out = np.empty(len(feature_cols))
            for j, col in enumerate(feature_cols):
                cell = record[positions[col.name]].strip()
                if cell == "":
                    raise ValidationError(f"{path}: row {r}: missing value in {col.name!r}")
                if col.kind == DISCRETE:
                    try:
                        out[j] = cat_lookup[col.name][cell]
                    except KeyError:
                        raise ValidationError(
                            f"{path}: row {r}: unknown category {cell!r} for {col.name!r}"
                        ) from None
                else:
                    try:
                        out[j] = float(cell)
                    except ValueError:
                        raise ValidationError(
                            f"{path}: row {r}: non-numeric value {cell!r} in {col.name!r}"
                        ) from None
            cell = record[positions[schema.label]].strip()
            if cell not in label_lookup:
                raise ValidationError(f"{path}: row {r}: unknown label {cell!r}")
            rows.append(out)
            labels.append(label_lookup[cell])

    if not rows:
        raise ValidationError(f"{path}: no data rows")
    return Dataset(schema, np.array(rows), np.array(labels))


def save_dataset(ds: Dataset, path) -> None:
    """Write the dataset back to CSV (feature columns then label)."""
    feature_cols = ds.schema.feature_columns
    label_cats = ds.schema.label_categories
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([c.name for c in feature_cols] + [ds.schema.label])
        for i in range(len(ds)):
            record = []
            for j, col in enumerate(feature_cols):
                v = ds.rows[i, j]
                if col.kind == DISCRETE:
                    record.append(col.categories[int(v)])
                elif v == int(v):
                    record.append(str(int(v)))
                else:
                    record.append(repr(float(v)))
            record.append(label_cats[ds.labels[i]])
            writer.writerow(record)


def split(ds: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Stratified train/test split, deterministic per seed.

    Total test size is round(test_fraction * n); per-class counts are
    assigned by largest remainder so class proportions are preserved.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ValueError(f"test_fraction must be in (0, 1), got {test_fraction}")
    rng = np.random.default_rng(seed)
    n = len(ds)
    total_test = int(round(test_fraction * n))
    classes = np.unique(ds.labels)

    quotas = {}
    remainders = []
    for c in classes:
        exact = test_fraction * int(np.sum(ds.labels == c))
        quotas[c] = int(np.floor(exact))
        remainders.append((exact - np.floor(exact), c))
    short = total_test - sum(quotas.values())
    for _, c in sorted(remainders, key=lambda t: (-t[0], t[1]))[:short]:
        quotas[c] += 1

    test_idx = []
    for c in classes:
        members = np.flatnonzero(ds.labels == c)
        members = members[rng.permutation(len(members))]
        test_idx.extend(members[: quotas[c]])
    test_mask = np.zeros(n, dtype=bool)
    test_mask[np.array(test_idx, dtype=int)] = True
    return ds.subset(np.flatnonzero(~test_mask)), ds.subset(np.flatnonzero(test_mask))


def append_uncorrelated_feature(ds: Dataset, seed: int) -> Dataset:
    """Add a continuous column of fair coin flips, independent of everything.

    The column is named unrelated_0 (suffix incremented on collision); it is
    the hook the innocuous model keys on.
    """
    existing = {c.name for c in ds.schema.columns}
    k = 0
    while f"unrelated_{k}" in existing:
        k += 1
    name = f"unrelated_{k}"

    rng = np.random.default_rng(seed)
    values = rng.integers(0, 2, size=len(ds)).astype(np.float64)

    new_col = Column(name=name, kind=CONTINUOUS)
    columns = tuple(ds.schema.columns) + (new_col,)
    schema = Schema(columns=columns, sensitive_feature=ds.schema.sensitive_feature, label=ds.schema.label)
    rows = np.column_stack([ds.rows, values])
    return Dataset(schema, rows, ds.labels)
