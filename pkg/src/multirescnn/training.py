"""Training, evaluation and prediction loops.

Batches are padded per batch (each batch is only as wide as its longest
document).  Shuffling is deterministic: epoch ordering comes from
``default_rng([seed, epoch])`` so a rerun with the same seed replays the
exact same batch sequence.  Evaluation batching preserves dataset order.

Early stopping tracks one monitor metric on the dev split and keeps a full
copy of the best parameters; training stops after ``patience`` consecutive
epochs without strict improvement.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, NumericError
from .metrics import MetricsReport, compute_report
from .model import (
    ModelConfig,
    ModelParams,
    backward_batch,
    bce_loss_batch,
    forward_batch,
)
from .numerics import AdamState, adam_step
from .pipeline import PAD_INDEX, EncodedDataset, EncodedExample


def choose_early_stop_metric(num_labels: int) -> str:
    """Pick the monitor used for early stopping from the label-space size:
    precision@8 for large spaces, precision@5 for mid-sized, micro F1 when
    there are too few labels for a meaningful top-k."""
    if num_labels > 50:
        return "p_at_8"
    if num_labels >= 5:
        return "p_at_5"
    return "micro_f1"


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 16
    max_epochs: int = 100
    patience: int = 10
    early_stop_metric: str = "auto"
    seed: int = 0
    freeze_embeddings: bool = False
    eval_ks: tuple[int, ...] = (5, 8)
    threshold: float = 0.5

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_epochs < 1:
            raise ConfigError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.patience < 1:
            raise ConfigError(f"patience must be >= 1, got {self.patience}")


@dataclass
class Batch:
    idx: np.ndarray  # (B, N) int64, PAD-padded
    lengths: np.ndarray  # (B,)
    Y: np.ndarray  # (B, num_labels)
    doc_ids: list[str]


def _collate(examples: list[EncodedExample], num_labels: int) -> Batch:
    lengths = np.array([ex.token_ids.size for ex in examples], dtype=np.int64)
    width = int(lengths.max())
    idx = np.full((len(examples), width), PAD_INDEX, dtype=np.int64)
    Y = np.zeros((len(examples), num_labels), dtype=np.float64)
    for i, ex in enumerate(examples):
        idx[i, : ex.token_ids.size] = ex.token_ids
        Y[i] = ex.labels
    return Batch(idx=idx, lengths=lengths, Y=Y, doc_ids=[ex.id for ex in examples])


def make_batches(
    dataset: EncodedDataset, batch_size: int, seed: int, epoch: int
) -> list[Batch]:
    """Shuffled training batches for one epoch (deterministic in seed+epoch)."""
    rng = np.random.default_rng([seed, epoch])
    perm = rng.permutation(len(dataset.examples))
    out = []
    for start in range(0, perm.size, batch_size):
        chunk = [dataset.examples[j] for j in perm[start : start + batch_size]]
        out.append(_collate(chunk, dataset.num_labels))
    return out


def eval_batches(dataset: EncodedDataset, batch_size: int) -> list[Batch]:
    """Order-preserving batches for evaluation and prediction."""
    out = []
    for start in range(0, len(dataset.examples), batch_size):
        chunk = dataset.examples[start : start + batch_size]
        out.append(_collate(chunk, dataset.num_labels))
    return out


def predict_scores(
    params: ModelParams,
    config: ModelConfig,
    dataset: EncodedDataset,
    batch_size: int = 16,
) -> np.ndarray:
    """Sigmoid scores for every document, rows in dataset order."""
    rows = []
    for batch in eval_batches(dataset, batch_size):
        probs, _ = forward_batch(batch.idx, batch.lengths, params, config, training=False)
        rows.append(probs)
    if not rows:
        return np.zeros((0, dataset.num_labels))
    return np.concatenate(rows, axis=0)


def evaluate(
    params: ModelParams,
    config: ModelConfig,
    dataset: EncodedDataset,
    batch_size: int = 16,
    ks: tuple[int, ...] = (5, 8),
    threshold: float = 0.5,
    labelwise_macro: bool = False,
) -> tuple[MetricsReport, np.ndarray]:
    """Score a dataset; returns the metric report plus the score matrix."""
    rows = []
    total_loss = 0.0
    n = len(dataset.examples)
    for batch in eval_batches(dataset, batch_size):
        probs, trace = forward_batch(batch.idx, batch.lengths, params, config, training=False)
        loss, _ = bce_loss_batch(trace.y_hat, batch.Y)
        total_loss += loss * batch.Y.shape[0]
        rows.append(probs)
    scores = np.concatenate(rows, axis=0) if rows else np.zeros((0, dataset.num_labels))
    y_true = np.stack([ex.labels for ex in dataset.examples]) if n else np.zeros((0, dataset.num_labels))
    report = compute_report(y_true, scores, ks=ks, loss=total_loss / n if n else None,
                            threshold=threshold, labelwise_macro=labelwise_macro)
    return report, scores


@dataclass
class TrainResult:
    best_params: ModelParams
    best_epoch: int
    best_value: float
    metric_name: str
    history: list[dict] = field(default_factory=list)
    early_stopped: bool = False
    final_params: ModelParams | None = None


def train(
    params: ModelParams,
    config: ModelConfig,
    train_ds: EncodedDataset,
    dev_ds: EncodedDataset,
    tcfg: TrainConfig,
    log_path=None,
    progress=None,
) -> TrainResult:
    """Adam training with dev-set early stopping.

    One JSONL record per epoch is appended to ``log_path`` (when given) and to
    the returned history: epoch number, mean per-document train loss, the dev
    metric report, the monitor value, and wall-clock seconds.  ``progress``
    is an optional callable fed the same record (the CLI uses it to print).
    """
    metric = tcfg.early_stop_metric
    if metric == "auto":
        metric = choose_early_stop_metric(train_ds.num_labels)
    ks = tuple(k for k in tcfg.eval_ks if 1 <= k <= train_ds.num_labels)
    # The monitor has to be something evaluate() will actually produce.
    if metric.startswith("p_at_") and int(metric[5:]) not in ks:
        raise ConfigError(
            f"early-stop metric {metric!r} needs k in eval_ks={tcfg.eval_ks} "
            f"and k <= num_labels={train_ds.num_labels}"
        )

    names = params.names()
    state = AdamState.for_params(params.flat_arrays())
    best_params = params.copy()
    best_value = -np.inf
    best_epoch = 0
    epochs_since = 0
    history: list[dict] = []
    early_stopped = False

    log_fh = open(log_path, "w", encoding="utf-8") if log_path is not None else None
    try:
        for epoch in range(1, tcfg.max_epochs + 1):
            t0 = time.monotonic()
            drop_rng = np.random.default_rng([tcfg.seed, epoch, 1])
            loss_sum = 0.0
            for bi, batch in enumerate(make_batches(train_ds, tcfg.batch_size, tcfg.seed, epoch)):
                probs, trace = forward_batch(
                    batch.idx, batch.lengths, params, config, training=True, rng=drop_rng
                )
                loss, _ = bce_loss_batch(trace.y_hat, batch.Y)
                if not np.isfinite(loss):
                    raise NumericError(
                        f"non-finite training loss {loss!r} at epoch {epoch} batch {bi} "
                        f"(docs {batch.doc_ids[:3]}...); try a smaller learning rate"
                    )
                grads = backward_batch(trace, batch.Y, params, config)
                if tcfg.freeze_embeddings:
                    grads["embedding"][:] = 0.0
                adam_step(
                    params.flat_arrays(),
                    [grads[n] for n in names],
                    state,
                    tcfg.learning_rate,
                )
                loss_sum += loss * batch.Y.shape[0]
            train_loss = loss_sum / len(train_ds.examples)

            report, _ = evaluate(
                params, config, dev_ds, tcfg.batch_size, ks=ks, threshold=tcfg.threshold
            )
            value = report.get(metric)
            record = {
                "epoch": epoch,
                "train_loss": round(train_loss, 10),
                "dev": report.to_dict(),
                "monitor": metric,
                "monitor_value": None if np.isnan(value) else round(float(value), 10),
                "seconds": round(time.monotonic() - t0, 3),
            }
            history.append(record)
            if log_fh is not None:
                log_fh.write(json.dumps(record, sort_keys=True) + "\n")
                log_fh.flush()
            if progress is not None:
                progress(record)

            if np.isfinite(value) and value > best_value:
                best_value = float(value)
                best_epoch = epoch
                best_params = params.copy()
                epochs_since = 0
            else:
                epochs_since += 1
                if epochs_since >= tcfg.patience:
                    early_stopped = True
                    break
    finally:
        if log_fh is not None:
            log_fh.close()

    return TrainResult(
        best_params=best_params,
        best_epoch=best_epoch,
        best_value=best_value,
        metric_name=metric,
        history=history,
        early_stopped=early_stopped,
        final_params=params,
    )
