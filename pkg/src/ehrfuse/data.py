"""Typed tabular dataset: loading, imputation, 3:1:1 splitting, class weights.

Cells are stored as Python values: str for categorical/freetext, float for
numerical, bool for binary, None for missing. Feature order is fixed by the
schema and defines the column index used everywhere downstream.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigError, DataError
from .prompts import MISSING_TEXT_SENTINEL, PromptTemplate, default_template

KINDS = ("categorical", "numerical", "binary", "freetext")
STRUCTURED_KINDS = ("categorical", "numerical", "binary")

_BINARY_TRUE = {"yes", "true", "1"}
_BINARY_FALSE = {"no", "false", "0"}


@dataclass(frozen=True)
class FeatureSpec:
    name: str
    kind: str
    template: PromptTemplate


@dataclass(frozen=True)
class Schema:
    features: tuple[FeatureSpec, ...]
    label_name: str
    task: str  # "classification" | "regression"
    num_classes: int = 0

    def __post_init__(self):
        if len(self.features) < 1:
            raise ConfigError("schema needs at least one feature")
        names = [f.name for f in self.features]
        if len(set(names)) != len(names):
            raise ConfigError("duplicate feature names in schema")
        if self.label_name in names:
            raise ConfigError("label name collides with a feature name")
        if self.task not in ("classification", "regression"):
            raise ConfigError(f"unknown task '{self.task}'")
        if self.task == "classification" and self.num_classes < 2:
            raise ConfigError("classification needs num_classes >= 2")
        for f in self.features:
            if f.kind not in KINDS:
                raise ConfigError(f"feature '{f.name}': unknown kind '{f.kind}'")
            f.template.validate(f.kind, f.name)

    @property
    def m(self) -> int:
        return len(self.features)

    def to_dict(self) -> dict:
        feats = []
        for f in self.features:
            d = {"name": f.name, "kind": f.kind}
            if f.kind == "binary":
                d["template_pos"] = f.template.positive_text
                d["template_neg"] = f.template.negative_text
            else:
                d["template"] = f.template.text
            feats.append(d)
        label = {"name": self.label_name, "task": self.task}
        if self.task == "classification":
            label["num_classes"] = self.num_classes
        return {"features": feats, "label": label}

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a hash; used to fingerprint schemas in cache headers."""
    h = 0xCBF29CE484222325
    for b in data:
        h ^= b
        h = (h * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h


def schema_hash(schema: Schema) -> int:
    return fnv1a64(schema.canonical_json().encode("utf-8"))


def schema_from_dict(obj: dict) -> Schema:
    if not isinstance(obj, dict) or "features" not in obj or "label" not in obj:
        raise ConfigError("schema file must contain 'features' and 'label'")
    feats = []
    for entry in obj["features"]:
        name = entry.get("name")
        kind = entry.get("kind")
        if not name or kind not in KINDS:
            raise ConfigError(f"bad feature entry: {entry!r}")
        if kind == "binary":
            if "template_pos" in entry or "template_neg" in entry:
                tmpl = PromptTemplate(
                    positive_text=entry.get("template_pos"),
                    negative_text=entry.get("template_neg"),
                )
            else:
                tmpl = default_template(name, kind)
        else:
            if "template" in entry:
                tmpl = PromptTemplate(text=entry["template"])
            else:
                tmpl = default_template(name, kind)
        feats.append(FeatureSpec(name=name, kind=kind, template=tmpl))
    label = obj["label"]
    return Schema(
        features=tuple(feats),
        label_name=label.get("name", ""),
        task=label.get("task", ""),
        num_classes=int(label.get("num_classes", 0)),
    )


def load_schema(path) -> Schema:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
    except FileNotFoundError:
        raise DataError(f"schema file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"schema file {path} is not valid JSON: {exc}")
    return schema_from_dict(obj)


@dataclass
class Dataset:
    schema: Schema
    rows: list[list]           # N x m cell values, None = missing
    labels: np.ndarray         # int class indices or float targets
    split_tags: list[str] = field(default_factory=list)  # train|val|test|unassigned
    parse_warnings: int = 0

    def __post_init__(self):
        if not self.split_tags:
            self.split_tags = ["unassigned"] * len(self.rows)

    @property
    def n(self) -> int:
        return len(self.rows)

    @property
    def m(self) -> int:
        return self.schema.m

    def indices(self, tag: str) -> np.ndarray:
        return np.array(
            [i for i, t in enumerate(self.split_tags) if t == tag], dtype=int
        )


def _parse_cell(kind: str, raw: str):
    """Parse one CSV field; returns (value, ok). Empty string = missing."""
    if raw == "":
        return None, True
    if kind == "numerical":
        try:
            v = float(raw)
        except ValueError:
            return None, False
        if not np.isfinite(v):
            return None, False
        return v, True
    if kind == "binary":
        low = raw.strip().lower()
        if low in _BINARY_TRUE:
            return True, True
        if low in _BINARY_FALSE:
            return False, True
        return None, False
    return raw, True  # categorical / freetext keep the string


def load_dataset(schema_file, table_file) -> Dataset:
    """Load schema + CSV table into a Dataset; unparseable cells become missing."""
    schema = load_schema(schema_file)
    try:
        fh = open(table_file, "r", encoding="utf-8", newline="")
    except FileNotFoundError:
        raise DataError(f"table file not found: {table_file}")
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"table file {table_file} is empty")
        col_index = {name: i for i, name in enumerate(header)}
        for f in schema.features:
            if f.name not in col_index:
                raise DataError(f"table is missing schema column '{f.name}'")
        if schema.label_name not in col_index:
            raise DataError("label column not found")

        rows, labels, warnings = [], [], 0
        for lineno, record in enumerate(reader, start=2):
            if len(record) != len(header):
                raise DataError(
                    f"row at line {lineno} has {len(record)} fields, "
                    f"expected {len(header)}"
                )
            cells = []
            for f in schema.features:
                value, ok = _parse_cell(f.kind, record[col_index[f.name]])
                if not ok:
                    warnings += 1
                cells.append(value)
            raw_label = record[col_index[schema.label_name]]
            if schema.task == "classification":
                try:
                    y = int(raw_label)
                except ValueError:
                    raise DataError(f"bad class label {raw_label!r} at line {lineno}")
                if not 0 <= y < schema.num_classes:
                    raise DataError(f"label {y} out of range at line {lineno}")
            else:
                try:
                    y = float(raw_label)
                except ValueError:
                    raise DataError(
                        f"bad regression target {raw_label!r} at line {lineno}"
                    )
            rows.append(cells)
            labels.append(y)

    if not rows:
        raise DataError(f"table file {table_file} has no data rows")
    dtype = int if schema.task == "classification" else float
    return Dataset(
        schema=schema,
        rows=rows,
        labels=np.asarray(labels, dtype=dtype),
        parse_warnings=warnings,
    )


@dataclass(frozen=True)
class ImputationStats:
    """Per-feature fill values fitted on the training split only."""

    fill: dict  # feature name -> mean (numerical) or mode (categorical/binary)


def compute_imputation_stats(dataset: Dataset) -> ImputationStats:
    train_idx = dataset.indices("train")
    if train_idx.size == 0:
        raise DataError("no training rows: split the dataset before imputing")
    fill = {}
    for j, spec in enumerate(dataset.schema.features):
        values = [dataset.rows[i][j] for i in train_idx
                  if dataset.rows[i][j] is not None]
        if spec.kind == "numerical":
            if values:
                fill[spec.name] = float(np.mean(values))
        elif spec.kind in ("categorical", "binary"):
            if values:
                # mode, ties broken by first-seen order in training rows
                counts, order = {}, []
                for v in values:
                    if v not in counts:
                        order.append(v)
                    counts[v] = counts.get(v, 0) + 1
                fill[spec.name] = max(order, key=lambda v: counts[v])
        # freetext uses the fixed sentinel, no fitted statistic
    return ImputationStats(fill=fill)


def impute(dataset: Dataset, stats: ImputationStats) -> Dataset:
    """Fill missing cells: mean / mode / text sentinel. Returns a new Dataset."""
    new_rows = []
    for row in dataset.rows:
        cells = list(row)
        for j, spec in enumerate(dataset.schema.features):
            if cells[j] is not None:
                continue
            if spec.kind == "freetext":
                cells[j] = MISSING_TEXT_SENTINEL
            else:
                if spec.name not in stats.fill:
                    raise DataError(
                        f"no imputation statistic for feature '{spec.name}' "
                        "(all training values missing?)"
                    )
                cells[j] = stats.fill[spec.name]
        new_rows.append(cells)
    return Dataset(
        schema=dataset.schema,
        rows=new_rows,
        labels=dataset.labels.copy(),
        split_tags=list(dataset.split_tags),
        parse_warnings=dataset.parse_warnings,
    )


def split(dataset: Dataset, seed: int, ratios=(3, 1, 1)) -> Dataset:
    """Random 3:1:1 split: floor counts for train/val, remainder to test."""
    n = dataset.n
    if n < 5:
        raise DataError(f"need at least 5 rows to split 3:1:1, got {n}")
    total = sum(ratios)
    n_train = n * ratios[0] // total
    n_val = n * ratios[1] // total
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    tags = ["test"] * n
    for i in perm[:n_train]:
        tags[i] = "train"
    for i in perm[n_train:n_train + n_val]:
        tags[i] = "val"
    return Dataset(
        schema=dataset.schema,
        rows=[list(r) for r in dataset.rows],
        labels=dataset.labels.copy(),
        split_tags=tags,
        parse_warnings=dataset.parse_warnings,
    )


@dataclass(frozen=True)
class ClassWeights:
    w: np.ndarray  # K nonnegative reals

    @property
    def ratio(self) -> float:
        """Positive-to-negative weight ratio for binary tasks."""
        return float(self.w[1] / self.w[0])


def compute_class_weights(dataset: Dataset) -> ClassWeights:
    """Balanced weights w_k = N_train / (K * n_k) over the training split."""
    if dataset.schema.task != "classification":
        raise ConfigError("class weights only apply to classification tasks")
    k = dataset.schema.num_classes
    train_idx = dataset.indices("train")
    labels = dataset.labels[train_idx]
    counts = np.bincount(labels, minlength=k)
    for c in range(k):
        if counts[c] == 0:
            raise DataError(f"class {c} not present in training split")
    w = train_idx.size / (k * counts.astype(float))
    return ClassWeights(w=w)


def drop_features(dataset: Dataset, kinds: tuple[str, ...]) -> Dataset:
    """New Dataset with features of the given kinds removed (ablation support)."""
    keep = [j for j, f in enumerate(dataset.schema.features) if f.kind not in kinds]
    if len(keep) == len(dataset.schema.features):
        raise DataError(f"no {'/'.join(kinds)} columns to ablate")
    if not keep:
        raise DataError("ablation would remove every feature")
    new_schema = Schema(
        features=tuple(dataset.schema.features[j] for j in keep),
        label_name=dataset.schema.label_name,
        task=dataset.schema.task,
        num_classes=dataset.schema.num_classes,
    )
    return Dataset(
        schema=new_schema,
        rows=[[row[j] for j in keep] for row in dataset.rows],
        labels=dataset.labels.copy(),
        split_tags=list(dataset.split_tags),
        parse_warnings=dataset.parse_warnings,
    )
