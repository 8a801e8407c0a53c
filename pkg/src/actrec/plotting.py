"""Figures for evaluation reports, rendered to files with the Agg backend."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_accuracy_vs_k(rows: list[dict], path, methods=None):
    """``rows``: one dict per k with ``k`` and per-method 16-class accuracies under ``acc``."""
    fig, ax = plt.subplots(figsize=(6, 4))
    ks = [r["k"] for r in rows]
    methods = methods or list(rows[0]["acc"])
    for m in methods:
        ax.plot(ks, [100 * r["acc"][m] for r in rows], marker="o", label=m)
    if rows and rows[0].get("majority") is not None:
        ax.plot(ks, [100 * r["majority"] for r in rows], ls="--", color="grey", label="majority")
    if rows and rows[0].get("bayes") is not None:
        ax.plot(ks, [100 * r["bayes"] for r in rows], ls=":", color="black", label="bayes rate")
    ax.set_xticks(ks)
    ax.set_xlabel("training days per user (k)")
    ax.set_ylabel("accuracy (%)")
    ax.legend(fontsize=8)
    return _save(fig, path)


def plot_stream(report, path):
    fig, ax = plt.subplots(figsize=(7, 4))
    x = np.arange(1, len(report.days) + 1)
    for name, ys in (("seen", report.seen_cum), ("unseen", report.unseen_cum), ("all", report.overall_cum)):
        ax.plot(x, [np.nan if v is None else 100 * v for v in ys], marker=".", label=name)
    ax.set_xlabel("test day")
    ax.set_ylabel("accumulative accuracy (%)")
    ax.legend()
    return _save(fig, path)


def plot_buckets(report, path):
    shown = [b for b in report.buckets if b["reported"]]
    fig, ax = plt.subplots(figsize=(6, 4))
    if shown:
        ax.bar([b["train_days"] for b in shown], [100 * b["accuracy"] for b in shown])
    ax.set_xlabel("user-specific training days")
    ax.set_ylabel("accuracy (%)")
    ax.set_title(f"buckets with more than {report.min_bucket_users} users")
    return _save(fig, path)


def plot_confusion(cm, path):
    counts = cm.counts.astype(float)
    rows = counts.sum(axis=1, keepdims=True)
    frac = np.divide(counts, rows, out=np.zeros_like(counts), where=rows > 0)
    n = len(cm.names)
    fig, ax = plt.subplots(figsize=(1.2 + 0.45 * n, 1 + 0.4 * n))
    im = ax.imshow(frac, vmin=0, vmax=1, cmap="Blues")
    ax.set_xticks(range(n), cm.names, rotation=90, fontsize=7)
    ax.set_yticks(range(n), cm.names, fontsize=7)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    fig.colorbar(im, ax=ax, fraction=0.046)
    return _save(fig, path)
