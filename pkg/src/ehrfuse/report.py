"""Figure rendering for run outputs: threshold sweeps, corruption curves,
confusion matrices, and training histories. All figures are written to files
next to the delimited/JSON outputs."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def plot_threshold_curve(curve, path) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(curve.thresholds, curve.sensitivity, label="sensitivity")
    ax.plot(curve.thresholds, curve.specificity, label="specificity")
    ax.plot(curve.thresholds, curve.bacc, label="balanced accuracy")
    ax.set_xlabel("threshold")
    ax.set_ylabel("metric")
    ax.set_ylim(-0.02, 1.02)
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_confusion(counts, path) -> None:
    mat = np.array([[counts.tn, counts.fp], [counts.fn, counts.tp]])
    fig, ax = plt.subplots(figsize=(4, 4))
    ax.imshow(mat, cmap="Blues")
    for (i, j), v in np.ndenumerate(mat):
        ax.text(j, i, str(v), ha="center", va="center",
                color="black" if v < mat.max() * 0.6 else "white")
    ax.set_xticks([0, 1], ["pred 0", "pred 1"])
    ax.set_yticks([0, 1], ["true 0", "true 1"])
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_corruption_sweep(results: list[dict], path) -> None:
    rates = [r["rate"] for r in results]
    metric_names = sorted(results[0]["mean"].keys())
    fig, axes = plt.subplots(1, len(metric_names),
                             figsize=(4.5 * len(metric_names), 4),
                             squeeze=False)
    for ax, name in zip(axes[0], metric_names):
        means = [r["mean"][name] for r in results]
        stds = [r["std"][name] for r in results]
        ax.errorbar(rates, means, yerr=stds, marker="o", capsize=3)
        ax.set_xlabel("corruption rate")
        ax.set_ylabel(name)
        ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_history(history: dict, path) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    epochs = range(len(history["train_loss"]))
    ax.plot(epochs, history["train_loss"], label="train loss")
    ax.plot(epochs, history["val_loss"], label="validation loss")
    if history.get("best_epoch", -1) >= 0:
        ax.axvline(history["best_epoch"], color="gray", linestyle="--",
                   label="best epoch")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_ablation(table: list[dict], metric_names: list[str], path) -> None:
    variants = [row["variant"] for row in table]
    fig, axes = plt.subplots(1, len(metric_names),
                             figsize=(4.5 * len(metric_names), 4),
                             squeeze=False)
    for ax, name in zip(axes[0], metric_names):
        vals = [row["mean"].get(name, np.nan) for row in table]
        ax.bar(range(len(variants)), vals)
        ax.set_xticks(range(len(variants)), variants, rotation=20, ha="right")
        ax.set_ylabel(name)
        ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def write_sweep_csv(results: list[dict], path) -> None:
    metric_names = sorted(results[0]["mean"].keys())
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["rate"] + [f"mean_{n}" for n in metric_names]
                        + [f"std_{n}" for n in metric_names])
        for r in results:
            writer.writerow([r["rate"]]
                            + [r["mean"][n] for n in metric_names]
                            + [r["std"][n] for n in metric_names])


def write_curve_csv(curve, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["threshold", "sensitivity", "specificity", "bacc"])
        for row in zip(curve.thresholds, curve.sensitivity,
                       curve.specificity, curve.bacc):
            writer.writerow(list(row))


def write_ablation_csv(table: list[dict], metric_names: list[str], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variant"] + [f"mean_{n}" for n in metric_names]
                        + [f"std_{n}" for n in metric_names])
        for row in table:
            writer.writerow([row["variant"]]
                            + [row["mean"].get(n, "") for n in metric_names]
                            + [row["std"].get(n, "") for n in metric_names])
