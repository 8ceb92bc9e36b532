"""Two-step training: consume a frozen cell-embedding cache, train the fusion
encoder and head with Adam, early-stop on validation loss, repeat over seeds,
and derive ablation variants."""

from __future__ import annotations

import copy
import time
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, compute_class_weights, drop_features
from .embedding import (CellEmbeddingMatrix, check_cache_against, embed_dataset,
                        make_provider)
from .errors import ConfigError, DataError, NumericalError
from .fusion import (AdamState, FusionConfig, FusionParams, adam_step, backward,
                     forward, init_params, param_items)
from .heads import (HeadParams, cross_entropy_grad_logits, head_backward,
                    head_forward, head_items, init_head, mse_grad_preds,
                    mse_loss, softmax, weighted_cross_entropy)
from . import metrics as M

VARIANTS = ("full", "no_prompts", "no_freetext", "random_encoder")


@dataclass(frozen=True)
class TrainConfig:
    task: str                      # "classification" | "regression"
    num_classes: int = 0
    lr: float = 1e-5
    batch_size: int = 256
    max_epochs: int = 100
    patience: int = 10
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    fusion: FusionConfig = None
    variant: str = "full"
    head_hidden: int = 0           # 0 -> fusion dim

    def __post_init__(self):
        if self.lr <= 0 or self.batch_size < 1 or self.patience < 1:
            raise ConfigError("lr > 0, batch_size >= 1, patience >= 1 required")
        if not self.seeds:
            raise ConfigError("need at least one seed")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant '{self.variant}'")
        if self.fusion is None:
            raise ConfigError("fusion config required")
        if self.task == "classification" and self.num_classes < 2:
            raise ConfigError("classification needs num_classes >= 2")


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    epoch_seconds: list[float] = field(default_factory=list)
    best_epoch: int = -1
    stop_epoch: int = -1

    def to_dict(self) -> dict:
        return {
            "train_loss": self.train_loss,
            "val_loss": self.val_loss,
            "epoch_seconds": self.epoch_seconds,
            "best_epoch": self.best_epoch,
            "stop_epoch": self.stop_epoch,
        }


@dataclass
class Model:
    fusion: FusionParams
    head: HeadParams

    def items(self):
        yield from param_items(self.fusion)
        yield from head_items(self.head)


def _no_improvement_run(val_losses: list[float], min_delta: float = 1e-8) -> int:
    """Consecutive epochs at the tail without a strict improvement."""
    best = np.inf
    run = 0
    for v in val_losses:
        if v < best - min_delta:
            best = v
            run = 0
        else:
            run += 1
    return run


def early_stop_check(val_losses: list[float], patience: int) -> bool:
    """True when validation loss has not improved for `patience` epochs."""
    if not val_losses:
        raise DataError("early stopping needs at least one recorded epoch")
    return _no_improvement_run(val_losses) >= patience


def _batch_loss_and_grads(model: Model, z_batch, y_batch, config: TrainConfig,
                          weights):
    e_cls, trace = forward(model.fusion, z_batch)
    out, head_cache = head_forward(model.head, e_cls)
    if config.task == "classification":
        probs = softmax(out)
        loss, _ = weighted_cross_entropy(probs, y_batch, weights)
        dout = cross_entropy_grad_logits(out, y_batch, weights)
    else:
        preds = out[:, 0]
        loss, _ = mse_loss(preds, y_batch)
        dout = mse_grad_preds(preds, y_batch)[:, None]
    head_grads, de = head_backward(model.head, head_cache, dout)
    fusion_grads, _ = backward(model.fusion, trace, de)
    fusion_grads.update(head_grads)
    return loss, fusion_grads


def _eval_loss(model: Model, z, y, config: TrainConfig, weights,
               batch_size: int = 512) -> float:
    """Validation loss, computed as the exact dataset mean (batch-size free)."""
    total = 0.0
    n = z.shape[0]
    for start in range(0, n, batch_size):
        zb = z[start:start + batch_size]
        yb = y[start:start + batch_size]
        e_cls, _ = forward(model.fusion, zb)
        out, _ = head_forward(model.head, e_cls)
        if config.task == "classification":
            probs = softmax(out)
            _, per_sample = weighted_cross_entropy(probs, yb, weights)
        else:
            _, per_sample = mse_loss(out[:, 0], yb)
        total += per_sample.sum()
    return total / n


def predict_scores(model: Model, z: np.ndarray, task: str,
                   batch_size: int = 512) -> np.ndarray:
    """Positive-class probabilities (classification) or point predictions."""
    outputs = []
    for start in range(0, z.shape[0], batch_size):
        e_cls, _ = forward(model.fusion, z[start:start + batch_size])
        out, _ = head_forward(model.head, e_cls)
        if task == "classification":
            outputs.append(softmax(out)[:, 1])
        else:
            outputs.append(out[:, 0])
    return np.concatenate(outputs)


def train(config: TrainConfig, dataset: Dataset, cache: CellEmbeddingMatrix,
          seed: int) -> tuple[Model, TrainHistory]:
    """Train one model on the cached embeddings; deterministic per seed."""
    check_cache_against(cache, dataset, expect_dim=config.fusion.dim)
    z_all = cache.values.astype(float)
    train_idx = dataset.indices("train")
    val_idx = dataset.indices("val")
    if train_idx.size == 0 or val_idx.size == 0:
        raise DataError("dataset must be split before training")

    if config.task == "classification":
        weights = compute_class_weights(dataset).w
        out_dim = config.num_classes
    else:
        weights = None
        out_dim = 1

    fusion = init_params(config.fusion, seed)
    head = init_head(config.fusion.dim, out_dim, seed + 1,
                     hidden=config.head_hidden)
    model = Model(fusion=fusion, head=head)
    state = AdamState.for_params(model.items())
    shuffle_rng = np.random.default_rng([seed, 0xE47])

    z_train, y_train = z_all[train_idx], dataset.labels[train_idx]
    z_val, y_val = z_all[val_idx], dataset.labels[val_idx]

    history = TrainHistory()
    best_loss = np.inf
    best_state = None
    for epoch in range(config.max_epochs):
        t0 = time.perf_counter()
        order = shuffle_rng.permutation(train_idx.size)
        epoch_loss, n_batches = 0.0, 0
        for start in range(0, train_idx.size, config.batch_size):
            sel = order[start:start + config.batch_size]
            loss, grads = _batch_loss_and_grads(
                model, z_train[sel], y_train[sel], config, weights)
            if not np.isfinite(loss):
                raise NumericalError(f"training diverged at epoch {epoch}")
            adam_step(model.items(), grads, state, config.lr)
            epoch_loss += loss
            n_batches += 1
        val_loss = _eval_loss(model, z_val, y_val, config, weights)
        history.train_loss.append(epoch_loss / n_batches)
        history.val_loss.append(float(val_loss))
        history.epoch_seconds.append(time.perf_counter() - t0)
        if val_loss < best_loss - 1e-8:
            best_loss = val_loss
            best_state = copy.deepcopy(model)
            history.best_epoch = epoch
        if early_stop_check(history.val_loss, config.patience):
            break
    history.stop_epoch = len(history.val_loss) - 1
    if best_state is not None:
        model = best_state
    elif history.val_loss:
        history.best_epoch = int(np.argmin(history.val_loss))
    return model, history


def evaluate(model: Model, dataset: Dataset, cache: CellEmbeddingMatrix,
             config: TrainConfig, split: str = "test",
             threshold: float = 0.5) -> dict:
    idx = dataset.indices(split)
    if idx.size == 0:
        raise DataError(f"no rows in split '{split}'")
    z = cache.values[idx].astype(float)
    y = dataset.labels[idx]
    scores = predict_scores(model, z, config.task)
    if config.task == "classification":
        c = M.confusion(scores, y, threshold)
        return {
            "bacc": M.bacc(c),
            "auroc": M.auroc(scores, y),
            "confusion": c.to_dict(),
        }
    return {"rmse": M.rmse(scores, y), "mae": M.mae(scores, y)}


def aggregate_metrics(per_seed: list[dict]) -> tuple[dict, dict]:
    """Arithmetic mean and sample std over numeric per-seed metrics."""
    keys = [k for k in per_seed[0] if isinstance(per_seed[0][k], (int, float))]
    mean, std = {}, {}
    for k in keys:
        vals = np.array([m[k] for m in per_seed], dtype=float)
        mean[k] = float(vals.mean())
        std[k] = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
    return mean, std


def run_seeds(config: TrainConfig, dataset: Dataset,
              cache: CellEmbeddingMatrix, threshold: float = 0.5) -> dict:
    """Train once per seed and report per-seed + averaged test metrics."""
    per_seed, histories = [], []
    for seed in config.seeds:
        try:
            model, history = train(config, dataset, cache, seed)
            m = evaluate(model, dataset, cache, config, threshold=threshold)
        except Exception as exc:
            raise type(exc)(f"seed {seed}: {exc}") from exc
        m = {"seed": seed, **m}
        per_seed.append(m)
        histories.append(history.to_dict())
    mean, std = aggregate_metrics(
        [{k: v for k, v in m.items() if k not in ("seed", "confusion")}
         for m in per_seed])
    return {"per_seed": per_seed, "mean": mean, "std": std,
            "histories": histories}


def make_variant(dataset: Dataset, variant: str, provider_kind: str,
                 dim: int, provider_seed: int):
    """Derive (dataset, cache) inputs for an ablation variant."""
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant '{variant}'")
    ds = dataset
    embed_variant = "prompts"
    kind = provider_kind
    if variant == "no_prompts":
        embed_variant = "raw"
    elif variant == "no_freetext":
        ds = drop_features(dataset, ("freetext",))
    elif variant == "random_encoder":
        kind = "random"
    provider = make_provider(kind, dim, provider_seed)
    cache = embed_dataset(ds, provider, variant=embed_variant)
    return ds, cache
