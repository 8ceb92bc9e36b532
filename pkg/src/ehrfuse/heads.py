"""Prediction heads (one hidden ReLU layer) and the training objectives:
class-weighted cross-entropy and mean squared error."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError

PROB_FLOOR = 1e-12


@dataclass
class HeadParams:
    wh: np.ndarray   # (d, d_h)
    bh: np.ndarray   # (d_h,)
    wo: np.ndarray   # (d_h, K) or (d_h, 1)
    bo: np.ndarray   # (K,) or (1,)


def init_head(dim: int, out_dim: int, seed: int, hidden: int = 0) -> HeadParams:
    """Glorot weights, zero biases; hidden width defaults to dim."""
    hidden = hidden or dim
    rng = np.random.default_rng(seed)
    bound_h = np.sqrt(6.0 / (dim + hidden))
    bound_o = np.sqrt(6.0 / (hidden + out_dim))
    return HeadParams(
        wh=rng.uniform(-bound_h, bound_h, size=(dim, hidden)),
        bh=np.zeros(hidden),
        wo=rng.uniform(-bound_o, bound_o, size=(hidden, out_dim)),
        bo=np.zeros(out_dim),
    )


def head_items(head: HeadParams):
    yield "head.wh", head.wh
    yield "head.bh", head.bh
    yield "head.wo", head.wo
    yield "head.bo", head.bo


def head_from_items(items) -> HeadParams:
    d = dict(items)
    return HeadParams(wh=d["head.wh"], bh=d["head.bh"],
                      wo=d["head.wo"], bo=d["head.bo"])


def head_forward(head: HeadParams, e: np.ndarray):
    """Logits (or scalar outputs) for a batch of patient embeddings.

    e: (B, d). Returns (out (B, K), cache for backward).
    """
    pre = e @ head.wh + head.bh
    mask = pre > 0
    act = pre * mask
    out = act @ head.wo + head.bo
    return out, (e, mask, act)


def head_backward(head: HeadParams, cache, dout: np.ndarray):
    """Gradients w.r.t. head parameters and the input embeddings."""
    e, mask, act = cache
    grads = {
        "head.wo": act.T @ dout,
        "head.bo": dout.sum(axis=0),
    }
    dact = dout @ head.wo.T
    dpre = dact * mask
    grads["head.wh"] = e.T @ dpre
    grads["head.bh"] = dpre.sum(axis=0)
    de = dpre @ head.wh.T
    return grads, de


def softmax(logits: np.ndarray) -> np.ndarray:
    """Numerically stable softmax over the last axis."""
    logits = np.asarray(logits, dtype=float)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    ex = np.exp(shifted)
    return ex / ex.sum(axis=-1, keepdims=True)


def weighted_cross_entropy(probs: np.ndarray, labels: np.ndarray,
                           weights: np.ndarray):
    """-(1/N) sum_i w_{y_i} log p_i[y_i], with probabilities floored.

    Returns (loss, per-sample contributions).
    """
    probs = np.atleast_2d(probs)
    labels = np.atleast_1d(labels)
    n = probs.shape[0]
    if labels.shape[0] != n:
        raise DataError("probs/labels length mismatch")
    p_true = probs[np.arange(n), labels]
    per_sample = -np.asarray(weights)[labels] * np.log(
        np.maximum(p_true, PROB_FLOOR))
    return float(per_sample.mean()), per_sample


def cross_entropy_grad_logits(logits: np.ndarray, labels: np.ndarray,
                              weights: np.ndarray) -> np.ndarray:
    """d(weighted CE)/d(logits) for the mean-over-batch loss."""
    n, k = logits.shape
    probs = softmax(logits)
    onehot = np.zeros((n, k))
    onehot[np.arange(n), labels] = 1.0
    w = np.asarray(weights)[labels][:, None]
    return w * (probs - onehot) / n


def mse_loss(preds: np.ndarray, targets: np.ndarray):
    """(1/N) sum (y - pred)^2; returns (loss, per-sample contributions)."""
    preds = np.asarray(preds, dtype=float).ravel()
    targets = np.asarray(targets, dtype=float).ravel()
    if preds.shape != targets.shape:
        raise DataError("preds/targets length mismatch")
    if preds.size < 1:
        raise DataError("mse needs at least one sample")
    per_sample = (targets - preds) ** 2
    return float(per_sample.mean()), per_sample


def mse_grad_preds(preds: np.ndarray, targets: np.ndarray) -> np.ndarray:
    preds = np.asarray(preds, dtype=float).ravel()
    targets = np.asarray(targets, dtype=float).ravel()
    return 2.0 * (preds - targets) / preds.size
