"""Confusion-matrix F1 metrics and evaluation reports.

Per-class F1 uses the 0/0 := 0 convention (a class that is never predicted and
never true scores 0 and still counts toward the macro average, penalizing
collapsed classes). Micro F1 is computed from pooled counts and therefore
equals accuracy for single-label multi-class classification.

Stream convention: classes ``0 .. C-2`` are keywords, class ``C-1`` is the
merged non-keyword class; ``keyword_f1`` is the unweighted mean over the
keyword classes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

__all__ = ["confusion_matrix", "F1Summary", "f1_scores", "EvalReport", "evaluate_predictions"]


def confusion_matrix(y_true, y_pred, n_classes: int) -> np.ndarray:
    """Count matrix with rows = true class, columns = predicted class."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise ValueError(f"shape mismatch: {y_true.shape} vs {y_pred.shape}")
    if y_true.size and (
        y_true.min() < 0 or y_true.max() >= n_classes or y_pred.min() < 0 or y_pred.max() >= n_classes
    ):
        raise ValueError(f"labels must lie in [0, {n_classes})")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


@dataclass(frozen=True)
class F1Summary:
    per_class_f1: np.ndarray
    macro_f1: float
    micro_f1: float


def f1_scores(cm: np.ndarray) -> F1Summary:
    """Per-class, macro-averaged, and micro-averaged F1 from a confusion matrix."""
    cm = np.asarray(cm)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1]:
        raise ValueError(f"confusion matrix must be square, got shape {cm.shape}")
    if np.any(cm < 0):
        raise ValueError("confusion matrix counts must be non-negative")
    total = int(cm.sum())
    if total < 1:
        raise ValueError("confusion matrix is empty")
    tp = np.diag(cm).astype(np.float64)
    pred_totals = cm.sum(axis=0).astype(np.float64)
    true_totals = cm.sum(axis=1).astype(np.float64)
    prec = np.divide(tp, pred_totals, out=np.zeros_like(tp), where=pred_totals > 0)
    rec = np.divide(tp, true_totals, out=np.zeros_like(tp), where=true_totals > 0)
    pr = prec + rec
    per_class = np.divide(2.0 * prec * rec, pr, out=np.zeros_like(tp), where=pr > 0)
    return F1Summary(
        per_class_f1=per_class,
        macro_f1=float(per_class.mean()),
        micro_f1=float(tp.sum() / total),
    )


@dataclass
class EvalReport:
    """Evaluation summary for one adaptation run."""

    macro_f1: float
    micro_f1: float
    per_class_f1: list[float]
    keyword_f1: float
    nonkeyword_f1: float
    n_samples: int
    config: dict = field(default_factory=dict)
    seed: int | None = None

    def to_dict(self) -> dict:
        return {
            "macro_f1": self.macro_f1,
            "micro_f1": self.micro_f1,
            "per_class_f1": list(self.per_class_f1),
            "keyword_f1": self.keyword_f1,
            "nonkeyword_f1": self.nonkeyword_f1,
            "n_samples": self.n_samples,
            "config": self.config,
            "seed": self.seed,
        }

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def evaluate_predictions(y_true, y_pred, n_classes: int, config: dict | None = None, seed: int | None = None) -> EvalReport:
    """Build an EvalReport from true/predicted labels."""
    cm = confusion_matrix(y_true, y_pred, n_classes)
    summary = f1_scores(cm)
    per_class = summary.per_class_f1
    return EvalReport(
        macro_f1=summary.macro_f1,
        micro_f1=summary.micro_f1,
        per_class_f1=[float(v) for v in per_class],
        keyword_f1=float(per_class[:-1].mean()),
        nonkeyword_f1=float(per_class[-1]),
        n_samples=int(cm.sum()),
        config=dict(config or {}),
        seed=seed,
    )
