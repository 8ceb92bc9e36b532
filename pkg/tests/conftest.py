import json
from pathlib import Path

import numpy as np
import pytest

from ehrfuse.data import (Dataset, FeatureSpec, Schema, compute_imputation_stats,
                          impute, split)
from ehrfuse.prompts import PromptTemplate, default_template


def make_schema(kinds, task="classification", num_classes=2):
    """Schema with auto-named features f0..fn of the given kinds."""
    feats = []
    for i, kind in enumerate(kinds):
        name = f"f{i}"
        feats.append(FeatureSpec(name=name, kind=kind,
                                 template=default_template(name, kind)))
    return Schema(features=tuple(feats), label_name="y", task=task,
                  num_classes=num_classes if task == "classification" else 0)


def make_dataset(kinds, rows, labels, task="classification", num_classes=2,
                 tags=None):
    schema = make_schema(kinds, task=task, num_classes=num_classes)
    dtype = int if task == "classification" else float
    ds = Dataset(schema=schema, rows=[list(r) for r in rows],
                 labels=np.asarray(labels, dtype=dtype))
    if tags is not None:
        ds.split_tags = list(tags)
    return ds


def write_schema_file(path, schema_dict):
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(schema_dict, fh)
    return path


def write_csv(path, header, rows):
    import csv
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    return path


@pytest.fixture
def simple_schema_dict():
    return {
        "features": [
            {"name": "age", "kind": "numerical",
             "template": "The patient is [value] years old."},
            {"name": "gender", "kind": "categorical",
             "template": "The patient is a [value]."},
            {"name": "note", "kind": "freetext",
             "template": "Clinical note: [value]"},
        ],
        "label": {"name": "y", "task": "classification", "num_classes": 2},
    }
