"""Evaluation metrics: confusion counts, balanced accuracy, AUROC (rank
estimator with half-credit ties), RMSE/MAE, and threshold sweeps."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def to_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn}


def confusion(scores, labels, threshold: float) -> ConfusionCounts:
    """Predict positive iff score >= threshold."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=int)
    if scores.shape != labels.shape or scores.size < 1:
        raise DataError("scores/labels must be equal-length and non-empty")
    pred = scores >= threshold
    pos = labels == 1
    tp = int(np.sum(pred & pos))
    fp = int(np.sum(pred & ~pos))
    fn = int(np.sum(~pred & pos))
    tn = int(np.sum(~pred & ~pos))
    return ConfusionCounts(tp=tp, fp=fp, tn=tn, fn=fn)


def sensitivity(c: ConfusionCounts) -> float:
    if c.tp + c.fn == 0:
        raise DataError("sensitivity undefined: no positives")
    return c.tp / (c.tp + c.fn)


def specificity(c: ConfusionCounts) -> float:
    if c.tn + c.fp == 0:
        raise DataError("specificity undefined: no negatives")
    return c.tn / (c.tn + c.fp)


def bacc(c: ConfusionCounts) -> float:
    if c.tp + c.fn == 0 or c.tn + c.fp == 0:
        raise DataError("BACC undefined: single-class evaluation set")
    return (sensitivity(c) + specificity(c)) / 2.0


def _average_ranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with ties assigned the average rank (exact halves)."""
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(len(values))
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        avg = (i + j) / 2.0 + 1.0
        ranks[order[i:j + 1]] = avg
        i = j + 1
    return ranks


def auroc(scores, labels) -> float:
    """Mann-Whitney estimator: P(score_pos > score_neg) + 0.5 P(tie)."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=int)
    n_pos = int(np.sum(labels == 1))
    n_neg = int(np.sum(labels == 0))
    if n_pos == 0 or n_neg == 0:
        raise DataError("AUROC undefined: single-class evaluation set")
    ranks = _average_ranks(scores)
    rank_sum = ranks[labels == 1].sum()
    u = rank_sum - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def auroc_pairwise(scores, labels) -> float:
    """O(N^2) oracle kept as a test reference; ties credited 0.5."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=int)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    if pos.size == 0 or neg.size == 0:
        raise DataError("AUROC undefined: single-class evaluation set")
    wins = 0.0
    for p in pos:
        wins += np.sum(p > neg) + 0.5 * np.sum(p == neg)
    return wins / (pos.size * neg.size)


def rmse(preds, targets) -> float:
    preds = np.asarray(preds, dtype=float).ravel()
    targets = np.asarray(targets, dtype=float).ravel()
    if preds.shape != targets.shape or preds.size < 1:
        raise DataError("preds/targets must be equal-length and non-empty")
    return float(np.sqrt(np.mean((targets - preds) ** 2)))


def mae(preds, targets) -> float:
    preds = np.asarray(preds, dtype=float).ravel()
    targets = np.asarray(targets, dtype=float).ravel()
    if preds.shape != targets.shape or preds.size < 1:
        raise DataError("preds/targets must be equal-length and non-empty")
    return float(np.mean(np.abs(targets - preds)))


@dataclass
class ThresholdCurve:
    thresholds: np.ndarray
    sensitivity: np.ndarray
    specificity: np.ndarray
    bacc: np.ndarray

    def to_dict(self) -> dict:
        return {
            "thresholds": self.thresholds.tolist(),
            "sensitivity": self.sensitivity.tolist(),
            "specificity": self.specificity.tolist(),
            "bacc": self.bacc.tolist(),
        }


def default_grid(points: int = 101) -> np.ndarray:
    return np.linspace(0.0, 1.0, points)


def threshold_sweep(scores, labels, grid=None) -> ThresholdCurve:
    if grid is None:
        grid = default_grid()
    grid = np.asarray(grid, dtype=float)
    if np.any(np.diff(grid) < 0):
        raise DataError("threshold grid must be sorted ascending")
    sens, spec, bal = [], [], []
    for t in grid:
        c = confusion(scores, labels, t)
        sens.append(sensitivity(c))
        spec.append(specificity(c))
        bal.append(bacc(c))
    return ThresholdCurve(
        thresholds=grid,
        sensitivity=np.array(sens),
        specificity=np.array(spec),
        bacc=np.array(bal),
    )
