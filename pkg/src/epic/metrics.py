"""Multiclass classification metrics.

Accuracy, support-weighted precision/recall/F1, macro F1 and macro one-vs-rest
ROC-AUC. Precision/recall/F1 with a zero denominator are reported as 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import EmptyInput, LengthMismatch

AUC_AVERAGING = "macro one-vs-rest over classes with at least one positive and one negative"


@dataclass(frozen=True)
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    support: int
    zero_division: bool = False


@dataclass(frozen=True)
class MetricsReport:
    confusion: np.ndarray
    accuracy: float
    precision_weighted: float
    recall_weighted: float
    f1_weighted: float
    f1_macro: float
    roc_auc_macro: float
    per_class: tuple[ClassMetrics, ...]

    @property
    def n(self) -> int:
        return int(self.confusion.sum())

    def to_dict(self, class_names=None) -> dict:
        names = list(class_names) if class_names is not None else [str(i) for i in range(len(self.per_class))]
        return {
            "n": self.n,
            "accuracy": self.accuracy,
            "precision_weighted": self.precision_weighted,
            "recall_weighted": self.recall_weighted,
            "f1_weighted": self.f1_weighted,
            "f1_macro": self.f1_macro,
            "roc_auc_macro": None if np.isnan(self.roc_auc_macro) else self.roc_auc_macro,
            "roc_auc_averaging": AUC_AVERAGING,
            "confusion": self.confusion.tolist(),
            "per_class": {
                name: {
                    "precision": pc.precision,
                    "recall": pc.recall,
                    "f1": pc.f1,
                    "support": pc.support,
                    "zero_division": pc.zero_division,
                }
                for name, pc in zip(names, self.per_class)
            },
        }

    def summary(self) -> str:
        auc = "nan" if np.isnan(self.roc_auc_macro) else f"{self.roc_auc_macro:.4f}"
        return (
            f"acc={self.accuracy:.4f} prec={self.precision_weighted:.4f} "
            f"recall={self.recall_weighted:.4f} f1_weighted={self.f1_weighted:.4f} "
            f"f1_macro={self.f1_macro:.4f} roc_auc={auc} n={self.n}"
        )


def confusion_matrix(true_labels, predicted, k: int) -> np.ndarray:
    cm = np.zeros((k, k), dtype=np.int64)
    np.add.at(cm, (true_labels, predicted), 1)
    return cm


def _safe_div(num, den):
    num = np.asarray(num, dtype=np.float64)
    den = np.asarray(den, dtype=np.float64)
    out = np.zeros_like(num)
    np.divide(num, den, out=out, where=den != 0)
    return out


def binary_auc(scores, positive) -> float:
    """Mann-Whitney AUC with midranks for ties; NaN if either class is absent."""
    scores = np.asarray(scores, dtype=np.float64)
    positive = np.asarray(positive, dtype=bool)
    n_pos = int(positive.sum())
    n_neg = len(positive) - n_pos
    if n_pos == 0 or n_neg == 0:
        return float("nan")
    order = np.argsort(scores, kind="mergesort")
    sorted_scores = scores[order]
    ranks = np.empty(len(scores), dtype=np.float64)
    # midrank over runs of equal scores
    boundaries = np.flatnonzero(np.diff(sorted_scores)) + 1
    starts = np.concatenate([[0], boundaries])
    ends = np.concatenate([boundaries, [len(scores)]])
    for s, e in zip(starts, ends):
        ranks[order[s:e]] = (s + e + 1) / 2.0
    rank_sum = ranks[positive].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def compute(true_labels, predicted, probabilities, k: int) -> MetricsReport:
    y = np.asarray(true_labels, dtype=np.int64)
    p = np.asarray(predicted, dtype=np.int64)
    probs = np.asarray(probabilities, dtype=np.float64)
    if len(y) == 0:
        raise EmptyInput("no examples to score")
    if len(p) != len(y) or probs.shape != (len(y), k):
        raise LengthMismatch(
            f"labels {len(y)}, predictions {len(p)}, probabilities {probs.shape} (k={k}) disagree"
        )
    if y.min() < 0 or y.max() >= k or p.min() < 0 or p.max() >= k:
        raise ValueError(f"class indices must lie in [0, {k})")
    if not np.allclose(probs.sum(axis=1), 1.0, atol=1e-4, rtol=0):
        raise ValueError("probability rows must sum to 1")

    cm = confusion_matrix(y, p, k)
    tp = np.diag(cm).astype(np.float64)
    support = cm.sum(axis=1)
    pred_count = cm.sum(axis=0)
    precision = _safe_div(tp, pred_count)
    recall = _safe_div(tp, support)
    f1 = _safe_div(2 * precision * recall, precision + recall)
    n = len(y)
    w = support / n

    aucs = [binary_auc(probs[:, j], y == j) for j in range(k)]
    valid = [a for a in aucs if not np.isnan(a)]
    auc = float(np.mean(valid)) if valid else float("nan")

    per_class = tuple(
        ClassMetrics(
            float(precision[j]),
            float(recall[j]),
            float(f1[j]),
            int(support[j]),
            zero_division=bool(pred_count[j] == 0 or support[j] == 0),
        )
        for j in range(k)
    )
    return MetricsReport(
        confusion=cm,
        accuracy=float(tp.sum() / n),
        precision_weighted=float((w * precision).sum()),
        recall_weighted=float((w * recall).sum()),
        f1_weighted=float((w * f1).sum()),
        f1_macro=float(f1.mean()),
        roc_auc_macro=auc,
        per_class=per_class,
    )
