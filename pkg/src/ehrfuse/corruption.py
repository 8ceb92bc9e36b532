"""Robustness protocol: marginal-resampling corruption of structured cells
and metric-vs-rate sweeps."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset, STRUCTURED_KINDS
from .errors import ConfigError, DataError
from .embedding import embed_dataset
from .train import TrainConfig, run_seeds


@dataclass(frozen=True)
class CorruptionPlan:
    rate: float
    seed: int
    scope: str = "all"   # corrupt all splits, or "test" only

    def __post_init__(self):
        if not 0.0 <= self.rate <= 1.0:
            raise ConfigError(f"corruption rate {self.rate} outside [0, 1]")
        if self.scope not in ("all", "test"):
            raise ConfigError(f"unknown corruption scope '{self.scope}'")


@dataclass
class CorruptionStats:
    n_eligible: int
    n_selected: int

    @property
    def fraction(self) -> float:
        return self.n_selected / self.n_eligible if self.n_eligible else 0.0


def corrupt(dataset: Dataset, plan: CorruptionPlan):
    """Independently resample each structured cell with probability `rate`.

    Replacement values are drawn uniformly from the column's empirical
    training-split marginal. Freetext cells and labels are never touched.
    Returns (corrupted Dataset, CorruptionStats).
    """
    train_idx = dataset.indices("train")
    if train_idx.size == 0:
        raise DataError("corruption needs a split dataset (training pool)")
    eligible_cols = [j for j, f in enumerate(dataset.schema.features)
                     if f.kind in STRUCTURED_KINDS]
    pools = {}
    for j in eligible_cols:
        pool = [dataset.rows[i][j] for i in train_idx
                if dataset.rows[i][j] is not None]
        if not pool:
            raise DataError(
                f"empty training pool for column "
                f"'{dataset.schema.features[j].name}'"
            )
        pools[j] = pool

    rng = np.random.default_rng([plan.seed, 0xC0B])
    target_rows = (range(dataset.n) if plan.scope == "all"
                   else [i for i, t in enumerate(dataset.split_tags)
                         if t == "test"])
    target_set = set(target_rows)
    new_rows = []
    n_eligible = 0
    n_selected = 0
    for i, row in enumerate(dataset.rows):
        cells = list(row)
        for j in eligible_cols:
            if i not in target_set:
                continue
            n_eligible += 1
            if rng.random() < plan.rate:
                n_selected += 1
                pool = pools[j]
                cells[j] = pool[rng.integers(len(pool))]
        new_rows.append(cells)
    out = Dataset(
        schema=dataset.schema,
        rows=new_rows,
        labels=dataset.labels.copy(),
        split_tags=list(dataset.split_tags),
        parse_warnings=dataset.parse_warnings,
    )
    return out, CorruptionStats(n_eligible=n_eligible, n_selected=n_selected)


def sweep(config: TrainConfig, dataset: Dataset, provider, rates,
          corrupt_seed: int = 0, scope: str = "all",
          threshold: float = 0.5) -> list[dict]:
    """Corrupt at each rate, rebuild embeddings, run all seeds, collect
    averaged metrics. Rate 0 (clean reference) is always included first."""
    rates = sorted(set(float(r) for r in rates) | {0.0})
    for r in rates:
        if not 0.0 <= r <= 1.0:
            raise ConfigError(f"corruption rate {r} outside [0, 1]")
    results = []
    for rate in rates:
        if rate == 0.0:
            ds = dataset
            stats = CorruptionStats(n_eligible=0, n_selected=0)
        else:
            ds, stats = corrupt(dataset, CorruptionPlan(rate=rate,
                                                        seed=corrupt_seed,
                                                        scope=scope))
        cache = embed_dataset(ds, provider)
        report = run_seeds(config, ds, cache, threshold=threshold)
        results.append({
            "rate": rate,
            "selected_cells": stats.n_selected,
            "eligible_cells": stats.n_eligible,
            "mean": report["mean"],
            "std": report["std"],
            "per_seed": report["per_seed"],
        })
    return results
