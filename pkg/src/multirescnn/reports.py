"""Report rendering: delimited metric files and matplotlib figures.

Everything here writes to disk (the Agg backend is forced, so no display is
needed).  The CLI report paths call these so that every JSON metrics file is
accompanied by a CSV and a PNG rendering of the same numbers.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .metrics import MetricsReport

HEADLINE_KEYS = (
    "micro_f1",
    "macro_f1",
    "micro_auc",
    "macro_auc",
    "micro_precision",
    "macro_precision",
    "micro_recall",
    "macro_recall",
)


def write_metrics_csv(report: MetricsReport, path) -> None:
    """Two-column metric,value file (blank value for undefined metrics)."""
    d = report.to_dict()
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "value"])
        for key in sorted(d):
            v = d[key]
            w.writerow([key, "" if v is None else v])


def write_history_csv(history: list[dict], path) -> None:
    """Flatten per-epoch training records into one CSV row per epoch."""
    if not history:
        raise ValueError("empty training history")
    dev_keys = sorted(history[0]["dev"])
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss", "seconds"] + [f"dev_{k}" for k in dev_keys])
        for rec in history:
            row = [rec["epoch"], rec["train_loss"], rec["seconds"]]
            row += ["" if rec["dev"].get(k) is None else rec["dev"].get(k) for k in dev_keys]
            w.writerow(row)


def write_predictions_csv(doc_ids, scores, label_names, path, top_k: int = 8) -> None:
    """Top-k labels per document: doc_id, rank, label, score."""
    scores = np.asarray(scores, dtype=np.float64)
    k = min(top_k, scores.shape[1])
    order = np.argsort(-scores, axis=1, kind="stable")[:, :k]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["doc_id", "rank", "label", "score"])
        for i, doc_id in enumerate(doc_ids):
            for rank, j in enumerate(order[i], start=1):
                w.writerow([doc_id, rank, label_names[j], f"{scores[i, j]:.6f}"])


def render_training_curves(history: list[dict], path) -> None:
    """Two-panel PNG: train loss per epoch, and dev metrics per epoch."""
    if not history:
        raise ValueError("empty training history")
    epochs = [rec["epoch"] for rec in history]
    losses = [rec["train_loss"] for rec in history]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    ax1.plot(epochs, losses, marker="o", ms=3)
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("train loss")
    ax1.set_title("training loss")
    ax1.grid(alpha=0.3)

    curve_keys = ["micro_f1", "macro_f1", "micro_auc", "macro_auc"]
    curve_keys += sorted(k for k in history[0]["dev"] if k.startswith("p_at_"))
    for key in curve_keys:
        ys = [rec["dev"].get(key) for rec in history]
        if all(v is None for v in ys):
            continue
        xs = [e for e, v in zip(epochs, ys) if v is not None]
        vs = [v for v in ys if v is not None]
        ax2.plot(xs, vs, marker="o", ms=3, label=key)
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("dev metric")
    ax2.set_title("dev metrics")
    ax2.set_ylim(0.0, 1.02)
    ax2.legend(fontsize=8)
    ax2.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_metrics_bars(report: MetricsReport, path, title: str = "evaluation") -> None:
    """Bar chart of the headline metrics plus any precision@k values."""
    d = report.to_dict()
    keys = [k for k in HEADLINE_KEYS if d.get(k) is not None]
    keys += [k for k in sorted(d) if k.startswith("p_at_") and d[k] is not None]
    values = [d[k] for k in keys]
    fig, ax = plt.subplots(figsize=(max(6, 0.9 * len(keys)), 4))
    bars = ax.bar(range(len(keys)), values, color="#4878a8")
    ax.set_xticks(range(len(keys)))
    ax.set_xticklabels(keys, rotation=40, ha="right", fontsize=8)
    ax.set_ylim(0.0, 1.05)
    ax.set_title(title)
    ax.grid(axis="y", alpha=0.3)
    for bar, v in zip(bars, values):
        ax.text(bar.get_x() + bar.get_width() / 2, v + 0.01, f"{v:.3f}",
                ha="center", va="bottom", fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_attention_profile(
    tokens: list[str],
    attention: np.ndarray,
    label_names: list[str],
    label_indices: list[int],
    path,
    max_positions: int = 120,
) -> None:
    """Per-label attention weight over token positions, one line per label.

    ``attention`` is the n x num_labels matrix from a single document's
    forward trace; only the first ``max_positions`` tokens are shown so the
    x axis stays readable.
    """
    A = np.asarray(attention, dtype=np.float64)
    n = min(len(tokens), A.shape[0], max_positions)
    fig, ax = plt.subplots(figsize=(max(8, n * 0.14), 4.5))
    for j in label_indices:
        ax.plot(range(n), A[:n, j], marker=".", ms=3, label=label_names[j])
    ax.set_xticks(range(n))
    ax.set_xticklabels(tokens[:n], rotation=90, fontsize=6)
    ax.set_ylabel("attention weight")
    ax.set_title("per-label attention over positions")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
