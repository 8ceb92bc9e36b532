"""Synthetic dataset generator with planted signal, used for self-contained
experiments and the directional ablation analogs.

Classification labels threshold a linear score over: a keyword planted in the
first freetext column, an opposite-effect pair of binary columns (whose raw
values are identical strings, so the raw-value ablation cannot tell them
apart), and the first numerical column. Regression targets are linear in two
numerical columns plus a keyword offset. Generation parameters are written to
a sidecar JSON so tests can use them as oracles.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError

KEYWORD = "sepsis"

# Small filler vocabulary keeps hash collisions with the keyword rare at the
# desk-scale embedding dimension.
_FILLER = (
    "patient stable overnight vitals normal cough noted "
    "labs pending chest clear ambulating"
).split()

_CATEGORIES = ("alpha", "beta", "gamma", "delta", "epsilon")

# score = C_KW * (keyword +/- 1) + C_BIN * (bin0 - bin1)/1 + C_NUM * z(num0)
C_KW = 1.8
C_BIN = 2.4
C_NUM = 0.4
NOISE_STD = 0.25

REG_COEF = (1.0, 0.5)
REG_KW_OFFSET = 4.0
REG_NOISE_STD = 0.5


@dataclass(frozen=True)
class SynthSpec:
    n_rows: int
    n_numerical: int = 2
    n_categorical: int = 1
    n_binary: int = 2
    n_freetext: int = 1
    task: str = "classification"
    seed: int = 0
    missing_rate: float = 0.0

    def __post_init__(self):
        if self.n_rows < 5:
            raise ConfigError("need at least 5 rows")
        if self.n_numerical < 1:
            raise ConfigError("need at least one numerical column")
        if min(self.n_categorical, self.n_binary, self.n_freetext) < 0:
            raise ConfigError("column counts must be nonnegative")
        if self.task not in ("classification", "regression"):
            raise ConfigError(f"unknown task '{self.task}'")
        if self.task == "regression" and self.n_numerical < 2:
            raise ConfigError("regression needs two numerical columns")


def _make_note(rng, planted: bool) -> str:
    n_words = int(rng.integers(4, 9))
    words = [str(rng.choice(_FILLER)) for _ in range(n_words)]
    note = " ".join(words).capitalize() + "."
    if planted:
        # mention the keyword twice, as clinical notes tend to repeat findings
        pos = int(rng.integers(0, n_words + 1))
        words.insert(pos, KEYWORD)
        note = " ".join(words).capitalize() + f". Concern for {KEYWORD}."
    return note


def build_schema_dict(spec: SynthSpec) -> dict:
    features = []
    for j in range(spec.n_numerical):
        features.append({
            "name": f"num_{j}", "kind": "numerical",
            "template": f"The num {j} level of the patient is [value].",
        })
    for j in range(spec.n_categorical):
        features.append({
            "name": f"cat_{j}", "kind": "categorical",
            "template": f"The cat {j} group of the patient is [value].",
        })
    for j in range(spec.n_binary):
        features.append({
            "name": f"bin_{j}", "kind": "binary",
            "template_pos": f"The patient has condition bin {j}.",
            "template_neg": f"The patient does not have condition bin {j}.",
        })
    for j in range(spec.n_freetext):
        features.append({
            "name": f"note_{j}", "kind": "freetext",
            "template": f"Clinical note {j}: [value]",
        })
    label = {"name": "outcome", "task": spec.task}
    if spec.task == "classification":
        label["num_classes"] = 2
    return {"features": features, "label": label}


def generate(spec: SynthSpec, out_dir) -> dict:
    """Write schema.json, table.csv, and params.json under out_dir.

    Returns the sidecar parameter dict.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)

    schema = build_schema_dict(spec)
    header = [f["name"] for f in schema["features"]] + ["outcome"]

    use_kw = spec.n_freetext >= 1
    use_bin = spec.n_binary >= 2 and spec.task == "classification"

    rows = []
    for _ in range(spec.n_rows):
        num = np.round(rng.uniform(0.0, 10.0, size=spec.n_numerical), 1)
        cats = [str(rng.choice(_CATEGORIES)) for _ in range(spec.n_categorical)]
        bins = [bool(rng.integers(0, 2)) for _ in range(spec.n_binary)]
        kw = bool(rng.integers(0, 2)) if use_kw else False
        notes = []
        for j in range(spec.n_freetext):
            notes.append(_make_note(rng, planted=(kw and j == 0)))

        if spec.task == "classification":
            score = C_NUM * (num[0] - 5.0) / 2.887
            if use_kw:
                score += C_KW * (1.0 if kw else -1.0)
            if use_bin:
                score += C_BIN * ((1.0 if bins[0] else -1.0)
                                  - (1.0 if bins[1] else -1.0)) / 2.0
            elif spec.n_binary == 1:
                score += C_BIN * (1.0 if bins[0] else -1.0) / 2.0
            score += rng.normal(0.0, NOISE_STD)
            label = int(score > 0)
        else:
            y = REG_COEF[0] * num[0] + REG_COEF[1] * num[1]
            if use_kw:
                y += REG_KW_OFFSET * (1.0 if kw else 0.0)
            y += rng.normal(0.0, REG_NOISE_STD)
            label = round(float(y), 4)

        cells = ([format(v, ".1f") for v in num] + cats
                 + [("yes" if b else "no") for b in bins] + notes)
        if spec.missing_rate > 0:
            for idx in range(len(cells)):
                if rng.random() < spec.missing_rate:
                    cells[idx] = ""
        rows.append(cells + [str(label)])

    with open(out_dir / "schema.json", "w", encoding="utf-8") as fh:
        json.dump(schema, fh, indent=2)
    with open(out_dir / "table.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)

    params = {
        "seed": spec.seed,
        "task": spec.task,
        "n_rows": spec.n_rows,
        "keyword": KEYWORD if use_kw else None,
        "keyword_column": "note_0" if use_kw else None,
        "keyword_prevalence": 0.5 if use_kw else 0.0,
        "signal": {
            "numerical": {"column": "num_0", "coef": C_NUM},
            "keyword": {"coef": C_KW} if use_kw else None,
            "binary_pair": ({"positive": "bin_0", "negative": "bin_1",
                             "coef": C_BIN} if use_bin else None),
            "noise_std": NOISE_STD,
        } if spec.task == "classification" else {
            "numerical": {"columns": ["num_0", "num_1"], "coefs": list(REG_COEF)},
            "keyword_offset": REG_KW_OFFSET if use_kw else 0.0,
            "noise_std": REG_NOISE_STD,
        },
    }
    with open(out_dir / "params.json", "w", encoding="utf-8") as fh:
        json.dump(params, fh, indent=2)
    return params
