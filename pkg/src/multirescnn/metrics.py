"""Multi-label ranking and classification metrics.

All functions take a binary ground-truth matrix ``y_true`` (num_docs x
num_labels) and a real score matrix of the same shape.

Conventions, chosen to match the usual multi-label evaluation protocol:

* F1 uses a fixed 0.5 decision threshold.  Micro counts pool every
  (document, label) decision; macro averages per-label precision and recall
  first and takes the harmonic mean of those two averages.  Any 0/0 ratio
  is defined as 0.
* AUC is the Mann-Whitney statistic computed from average ranks, so tied
  scores count 1/2.  Micro ranks the flattened matrix; macro averages
  per-label AUCs and skips labels whose column lacks a positive or a
  negative (NaN when every label is skipped).
* precision@k sorts scores descending with ties broken toward the lower
  label index (stable sort), and averages over documents.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np


def _check_pair(y_true: np.ndarray, scores: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    y = np.asarray(y_true, dtype=np.float64)
    s = np.asarray(scores, dtype=np.float64)
    if y.shape != s.shape or y.ndim != 2:
        raise ValueError(f"shape mismatch: y_true {y.shape} vs scores {s.shape}")
    return y, s


def _prf(tp: float, fp: float, fn: float) -> tuple[float, float, float]:
    p = tp / (tp + fp) if tp + fp > 0 else 0.0
    r = tp / (tp + fn) if tp + fn > 0 else 0.0
    f = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return p, r, f


@dataclass
class F1Result:
    micro_precision: float
    micro_recall: float
    micro_f1: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    per_label_precision: np.ndarray
    per_label_recall: np.ndarray
    per_label_f1: np.ndarray


def f1_scores(y_true, scores, threshold: float = 0.5) -> F1Result:
    y, s = _check_pair(y_true, scores)
    pred = (s >= threshold).astype(np.float64)
    tp = (pred * y).sum(axis=0)
    fp = (pred * (1.0 - y)).sum(axis=0)
    fn = ((1.0 - pred) * y).sum(axis=0)

    micro = _prf(float(tp.sum()), float(fp.sum()), float(fn.sum()))

    num_labels = y.shape[1]
    pl_p = np.zeros(num_labels)
    pl_r = np.zeros(num_labels)
    pl_f = np.zeros(num_labels)
    for j in range(num_labels):
        pl_p[j], pl_r[j], pl_f[j] = _prf(float(tp[j]), float(fp[j]), float(fn[j]))
    mp, mr = float(pl_p.mean()), float(pl_r.mean())
    mf = 2 * mp * mr / (mp + mr) if mp + mr > 0 else 0.0

    return F1Result(
        micro_precision=micro[0],
        micro_recall=micro[1],
        micro_f1=micro[2],
        macro_precision=mp,
        macro_recall=mr,
        macro_f1=mf,
        per_label_precision=pl_p,
        per_label_recall=pl_r,
        per_label_f1=pl_f,
    )


def _average_ranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with ties assigned the mean rank of their group."""
    order = np.argsort(values, kind="mergesort")
    sorted_v = values[order]
    new_group = np.concatenate(([True], sorted_v[1:] != sorted_v[:-1]))
    group = np.cumsum(new_group) - 1
    counts = np.bincount(group)
    end_rank = np.cumsum(counts).astype(np.float64)
    avg = end_rank - (counts - 1) / 2.0
    ranks = np.empty(values.size, dtype=np.float64)
    ranks[order] = avg[group]
    return ranks


def _binary_auc(y: np.ndarray, s: np.ndarray) -> float:
    """Mann-Whitney AUC of one flat score vector; NaN if single-class."""
    npos = float(y.sum())
    nneg = float(y.size - npos)
    if npos == 0 or nneg == 0:
        return math.nan
    ranks = _average_ranks(s)
    return (float(ranks[y > 0].sum()) - npos * (npos + 1) / 2.0) / (npos * nneg)


@dataclass
class AucResult:
    micro_auc: float
    macro_auc: float
    per_label_auc: np.ndarray  # NaN for skipped labels
    num_excluded: int


def auc_scores(y_true, scores) -> AucResult:
    y, s = _check_pair(y_true, scores)
    micro = _binary_auc(y.ravel(), s.ravel())
    num_labels = y.shape[1]
    per = np.full(num_labels, math.nan)
    for j in range(num_labels):
        per[j] = _binary_auc(y[:, j], s[:, j])
    valid = ~np.isnan(per)
    macro = float(per[valid].mean()) if valid.any() else math.nan
    return AucResult(
        micro_auc=micro,
        macro_auc=macro,
        per_label_auc=per,
        num_excluded=int((~valid).sum()),
    )


def precision_at_k(y_true, scores, k: int) -> float:
    y, s = _check_pair(y_true, scores)
    if not 1 <= k <= y.shape[1]:
        raise ValueError(f"k must be in [1, {y.shape[1]}], got {k}")
    top = np.argsort(-s, axis=1, kind="stable")[:, :k]
    hits = np.take_along_axis(y, top, axis=1)
    return float(hits.sum() / (y.shape[0] * k))


@dataclass
class MetricsReport:
    """Everything the evaluation path reports for one dataset."""

    micro_precision: float
    micro_recall: float
    micro_f1: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    micro_auc: float
    macro_auc: float
    precision_at: dict[int, float] = field(default_factory=dict)
    loss: float | None = None
    num_documents: int = 0
    num_labels: int = 0
    auc_labels_excluded: int = 0
    # alternative macro-F1 (plain mean of per-label F1s); None unless requested
    macro_f1_labelwise: float | None = None

    def get(self, name: str) -> float:
        """Look up a metric by its flat name, e.g. 'micro_f1' or 'p_at_8'."""
        if name.startswith("p_at_"):
            k = int(name[len("p_at_") :])
            if k not in self.precision_at:
                raise KeyError(f"precision@{k} was not computed for this report")
            return self.precision_at[k]
        if not hasattr(self, name):
            raise KeyError(f"unknown metric {name!r}")
        value = getattr(self, name)
        if value is None:
            raise KeyError(f"metric {name!r} was not computed for this report")
        return float(value)

    def to_dict(self) -> dict:
        def clean(x):
            if x is None:
                return None
            x = float(x)
            return None if math.isnan(x) else x

        d = {
            "micro_precision": clean(self.micro_precision),
            "micro_recall": clean(self.micro_recall),
            "micro_f1": clean(self.micro_f1),
            "macro_precision": clean(self.macro_precision),
            "macro_recall": clean(self.macro_recall),
            "macro_f1": clean(self.macro_f1),
            "micro_auc": clean(self.micro_auc),
            "macro_auc": clean(self.macro_auc),
            "loss": clean(self.loss) if self.loss is not None else None,
            "num_documents": self.num_documents,
            "num_labels": self.num_labels,
            "auc_labels_excluded": self.auc_labels_excluded,
        }
        if self.macro_f1_labelwise is not None:
            d["macro_f1_labelwise"] = clean(self.macro_f1_labelwise)
        for k in sorted(self.precision_at):
            d[f"p_at_{k}"] = clean(self.precision_at[k])
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def lines(self) -> list[str]:
        def fmt(x):
            if x is None or (isinstance(x, float) and math.isnan(x)):
                return "n/a"
            return f"{x:.4f}"

        out = [
            f"documents: {self.num_documents}  labels: {self.num_labels}",
            f"micro  P {fmt(self.micro_precision)}  R {fmt(self.micro_recall)}"
            f"  F1 {fmt(self.micro_f1)}  AUC {fmt(self.micro_auc)}",
            f"macro  P {fmt(self.macro_precision)}  R {fmt(self.macro_recall)}"
            f"  F1 {fmt(self.macro_f1)}  AUC {fmt(self.macro_auc)}",
        ]
        if self.macro_f1_labelwise is not None:
            out.append(f"macro F1 (mean of per-label F1s): "
                       f"{fmt(self.macro_f1_labelwise)}")
        for k in sorted(self.precision_at):
            out.append(f"P@{k}: {fmt(self.precision_at[k])}")
        if self.loss is not None:
            out.append(f"loss: {fmt(self.loss)}")
        if self.auc_labels_excluded:
            out.append(f"(macro AUC skipped {self.auc_labels_excluded} single-class labels)")
        return out


def compute_report(
    y_true,
    scores,
    ks: tuple[int, ...] = (5, 8),
    loss: float | None = None,
    threshold: float = 0.5,
    labelwise_macro: bool = False,
) -> MetricsReport:
    """Bundle F1, AUC and precision@k (ks beyond the label count are skipped).

    ``labelwise_macro`` additionally reports the mean of the per-label F1s;
    the headline macro_f1 is always the harmonic mean of the macro-averaged
    precision and recall, which is never smaller (the harmonic mean is
    concave, so averaging before it can only help).
    """
    y, s = _check_pair(y_true, scores)
    f1 = f1_scores(y, s, threshold=threshold)
    auc = auc_scores(y, s)
    p_at = {k: precision_at_k(y, s, k) for k in ks if 1 <= k <= y.shape[1]}
    labelwise = float(np.mean(f1.per_label_f1)) if labelwise_macro else None
    return MetricsReport(
        micro_precision=f1.micro_precision,
        micro_recall=f1.micro_recall,
        micro_f1=f1.micro_f1,
        macro_precision=f1.macro_precision,
        macro_recall=f1.macro_recall,
        macro_f1=f1.macro_f1,
        micro_auc=auc.micro_auc,
        macro_auc=auc.macro_auc,
        precision_at=p_at,
        loss=loss,
        num_documents=y.shape[0],
        num_labels=y.shape[1],
        auc_labels_excluded=auc.num_excluded,
        macro_f1_labelwise=labelwise,
    )
