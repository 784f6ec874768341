"""Tabular dataset ingestion, feature schema and scaling.

Categorical columns are stored internally as ordinal indices (position in
the schema's category list); one-hot inputs must be converted upstream.
Numeric scaling is fitted per feature and kept in the schema so that
apply/invert are exact inverses.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

SCALE_STANDARD = "standard"
SCALE_MINMAX = "minmax"
SCALE_NONE = "none"


class DataError(Exception):
    """Raised on schema violations or unparseable input."""


@dataclass(frozen=True)
class Feature:
    """One column: numeric (categories is None) or categorical."""

    name: str
    categories: tuple[str, ...] | None = None

    @property
    def is_categorical(self) -> bool:
        return self.categories is not None


@dataclass(frozen=True)
class Scaling:
    """Fitted scaling parameters for one numeric feature.

    standard: p1=mean, p2=population std.  minmax: p1=min, p2=max.
    """

    method: str = SCALE_NONE
    p1: float = 0.0
    p2: float = 1.0

    def apply(self, v: float) -> float:
        if self.method == SCALE_STANDARD:
            return (v - self.p1) / self.p2
        if self.method == SCALE_MINMAX:
            return (v - self.p1) / (self.p2 - self.p1)
        return v

    def invert(self, v: float) -> float:
        if self.method == SCALE_STANDARD:
            return v * self.p2 + self.p1
        if self.method == SCALE_MINMAX:
            return v * (self.p2 - self.p1) + self.p1
        return v


@dataclass(frozen=True)
class FeatureSchema:
    features: tuple[Feature, ...]
    scaling: dict[str, Scaling] = field(default_factory=dict)

    def __post_init__(self):
        names = [f.name for f in self.features]
        if len(set(names)) != len(names):
            raise DataError("duplicate feature names in schema")
        for f in self.features:
            if f.categories is not None:
                if len(f.categories) == 0:
                    raise DataError(f"feature {f.name!r}: empty category list")
                if len(set(f.categories)) != len(f.categories):
                    raise DataError(f"feature {f.name!r}: duplicate categories")
        for name, sc in self.scaling.items():
            if sc.method == SCALE_STANDARD and not sc.p2 > 0:
                raise DataError(f"feature {name!r}: standard scaling needs std > 0")
            if sc.method == SCALE_MINMAX and not sc.p2 > sc.p1:
                raise DataError(f"feature {name!r}: minmax scaling needs max > min")

    @property
    def names(self) -> list[str]:
        return [f.name for f in self.features]

    @property
    def n_features(self) -> int:
        return len(self.features)

    def feature(self, name: str) -> Feature:
        for f in self.features:
            if f.name == name:
                return f
        raise DataError(f"unknown feature {name!r}")

    def index_of(self, name: str) -> int:
        for i, f in enumerate(self.features):
            if f.name == name:
                return i
        raise DataError(f"unknown feature {name!r}")


@dataclass(frozen=True)
class Dataset:
    """Raw rows: numerics as floats, categoricals as ordinal indices."""

    schema: FeatureSchema
    rows: np.ndarray  # (n, d_raw) float64

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.float64)
        if rows.ndim != 2 and rows.size > 0:
            raise DataError("rows must be a 2-D matrix")
        if rows.size == 0:
            rows = rows.reshape(0, self.schema.n_features)
        if rows.shape[1] != self.schema.n_features:
            raise DataError(
                f"row width {rows.shape[1]} != schema width {self.schema.n_features}"
            )
        for j, feat in enumerate(self.schema.features):
            col = rows[:, j]
            if not np.all(np.isfinite(col)):
                raise DataError(f"non-finite value in column {feat.name!r}")
            if feat.is_categorical:
                k = len(feat.categories)
                if col.size and (np.any(col < 0) or np.any(col >= k)):
                    raise DataError(f"category index out of range in column {feat.name!r}")
        object.__setattr__(self, "rows", rows)

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    @property
    def d_raw(self) -> int:
        return self.rows.shape[1]


@dataclass(frozen=True)
class FeasibleBox:
    """Coordinate-wise bounds plus features pinned to their original values."""

    lower: np.ndarray
    upper: np.ndarray
    frozen: frozenset[int] = frozenset()

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=np.float64)
        hi = np.asarray(self.upper, dtype=np.float64)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise DataError("box bounds must be equal-length vectors")
        if np.any(lo > hi):
            raise DataError("box lower bound exceeds upper bound")
        if any(i < 0 or i >= lo.size for i in self.frozen):
            raise DataError("frozen index out of range")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        object.__setattr__(self, "frozen", frozenset(self.frozen))

    def clip(self, x: np.ndarray) -> np.ndarray:
        return np.clip(x, self.lower, self.upper)

    @staticmethod
    def from_data(x: np.ndarray, frozen: frozenset[int] = frozenset()) -> "FeasibleBox":
        x = np.asarray(x, dtype=np.float64)
        return FeasibleBox(x.min(axis=0), x.max(axis=0), frozen)


def load_csv(path, schema: FeatureSchema) -> Dataset:
    """Parse a CSV with a header row matching the schema feature names."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file, expected header row") from None
        if header != schema.names:
            raise DataError(
                f"{path}: header {header} does not match schema features {schema.names}"
            )
        rows = []
        for r, record in enumerate(reader):
            if len(record) != schema.n_features:
                raise DataError(f"{path}: row {r}: expected {schema.n_features} cells")
            parsed = []
            for feat, cell in zip(schema.features, record):
                if feat.is_categorical:
                    try:
                        parsed.append(float(feat.categories.index(cell)))
                    except ValueError:
                        raise DataError(
                            f"{path}: row {r}, column {feat.name!r}: "
                            f"unknown category {cell!r}"
                        ) from None
                else:
                    try:
                        v = float(cell)
                    except ValueError:
                        raise DataError(
                            f"{path}: row {r}, column {feat.name!r}: "
                            f"non-numeric value {cell!r}"
                        ) from None
                    if not math.isfinite(v):
                        raise DataError(
                            f"{path}: row {r}, column {feat.name!r}: non-finite value"
                        )
                    parsed.append(v)
            rows.append(parsed)
    matrix = np.array(rows, dtype=np.float64).reshape(len(rows), schema.n_features)
    return Dataset(schema, matrix)


def save_csv(dataset: Dataset, path) -> None:
    """Write rows back out; inverse of load_csv at the value level."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(dataset.schema.names)
        for row in dataset.rows:
            record = []
            for feat, v in zip(dataset.schema.features, row):
                if feat.is_categorical:
                    record.append(feat.categories[int(v)])
                else:
                    record.append(repr(float(v)))
            writer.writerow(record)


def fit_scaling(dataset: Dataset, method: str) -> FeatureSchema:
    """Fit per-numeric-feature scaling and return an updated schema."""
    if method not in (SCALE_STANDARD, SCALE_MINMAX, SCALE_NONE):
        raise DataError(f"unknown scaling method {method!r}")
    if method == SCALE_STANDARD and dataset.n < 2:
        raise DataError("standard scaling needs at least 2 rows")
    scaling = {}
    for j, feat in enumerate(dataset.schema.features):
        if feat.is_categorical:
            continue
        col = dataset.rows[:, j]
        if method == SCALE_STANDARD:
            std = float(np.std(col))  # population std
            if std == 0.0:
                raise DataError(f"feature {feat.name!r}: zero variance under standard scaling")
            scaling[feat.name] = Scaling(SCALE_STANDARD, float(np.mean(col)), std)
        elif method == SCALE_MINMAX:
            lo, hi = float(col.min()), float(col.max())
            if not hi > lo:
                raise DataError(f"feature {feat.name!r}: constant column under minmax scaling")
            scaling[feat.name] = Scaling(SCALE_MINMAX, lo, hi)
        else:
            scaling[feat.name] = Scaling(SCALE_NONE)
    return FeatureSchema(dataset.schema.features, scaling)


def apply_scaling(schema: FeatureSchema, rows: np.ndarray) -> np.ndarray:
    """Scale numeric columns of a raw matrix (categorical columns untouched)."""
    rows = np.asarray(rows, dtype=np.float64)
    squeeze = rows.ndim == 1
    out = np.atleast_2d(rows).copy()
    for j, feat in enumerate(schema.features):
        if feat.is_categorical:
            continue
        sc = schema.scaling.get(feat.name)
        if sc is None or sc.method == SCALE_NONE:
            continue
        if sc.method == SCALE_STANDARD:
            out[:, j] = (out[:, j] - sc.p1) / sc.p2
        else:
            out[:, j] = (out[:, j] - sc.p1) / (sc.p2 - sc.p1)
    return out[0] if squeeze else out


def invert_scaling(schema: FeatureSchema, rows: np.ndarray) -> np.ndarray:
    """Exact inverse of apply_scaling (within float round-off)."""
    rows = np.asarray(rows, dtype=np.float64)
    squeeze = rows.ndim == 1
    out = np.atleast_2d(rows).copy()
    for j, feat in enumerate(schema.features):
        if feat.is_categorical:
            continue
        sc = schema.scaling.get(feat.name)
        if sc is None or sc.method == SCALE_NONE:
            continue
        if sc.method == SCALE_STANDARD:
            out[:, j] = out[:, j] * sc.p2 + sc.p1
        else:
            out[:, j] = out[:, j] * (sc.p2 - sc.p1) + sc.p1
    return out[0] if squeeze else out


def schema_to_dict(schema: FeatureSchema) -> dict:
    out = {"features": [], "scaling": {}}
    for f in schema.features:
        rec = {"name": f.name, "kind": "categorical" if f.is_categorical else "numeric"}
        if f.is_categorical:
            rec["categories"] = list(f.categories)
        out["features"].append(rec)
    for name, sc in schema.scaling.items():
        out["scaling"][name] = {"method": sc.method, "p1": sc.p1, "p2": sc.p2}
    return out


def schema_from_dict(d: dict) -> FeatureSchema:
    feats = []
    for rec in d.get("features", []):
        if rec.get("kind") == "categorical":
            feats.append(Feature(rec["name"], tuple(rec["categories"])))
        else:
            feats.append(Feature(rec["name"]))
    scaling = {
        name: Scaling(rec["method"], float(rec["p1"]), float(rec["p2"]))
        for name, rec in d.get("scaling", {}).items()
    }
    return FeatureSchema(tuple(feats), scaling)


def save_schema(schema: FeatureSchema, path) -> None:
    with open(path, "w") as fh:
        json.dump(schema_to_dict(schema), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_schema(path) -> FeatureSchema:
    with open(path) as fh:
        return schema_from_dict(json.load(fh))


def split_rows(dataset: Dataset, n_train: int) -> tuple[Dataset, Dataset]:
    """First n_train rows for training, the remainder for explanation."""
    if not 0 <= n_train <= dataset.n:
        raise DataError(f"n_train {n_train} out of range for {dataset.n} rows")
    return (
        Dataset(dataset.schema, dataset.rows[:n_train]),
        Dataset(dataset.schema, dataset.rows[n_train:]),
    )
