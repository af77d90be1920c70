"""Precision/recall/F1 for multi-class and multi-label predictions, with
a confusion matrix for the multi-class case and report formatting."""

from __future__ import annotations

import json
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np


def _prf(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f1


@dataclass
class MetricsReport:
    """Per-class and aggregated precision/recall/F1 for one evaluation."""

    task: str
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    support: np.ndarray
    macro_precision: float
    macro_recall: float
    macro_f1: float
    micro_precision: float
    micro_recall: float
    micro_f1: float
    confusion: np.ndarray | None = None
    label_names: list[str] = field(default_factory=list)

    @property
    def k(self) -> int:
        return self.precision.shape[0]

    def _name(self, c: int) -> str:
        return self.label_names[c] if c < len(self.label_names) else str(c)

    def to_dict(self) -> dict:
        d = {
            "task": self.task,
            "per_class": [
                {"label": self._name(c), "precision": float(self.precision[c]),
                 "recall": float(self.recall[c]), "f1": float(self.f1[c]),
                 "support": int(self.support[c])}
                for c in range(self.k)
            ],
            "macro": {"precision": self.macro_precision, "recall": self.macro_recall,
                      "f1": self.macro_f1},
            "micro": {"precision": self.micro_precision, "recall": self.micro_recall,
                      "f1": self.micro_f1},
        }
        if self.confusion is not None:
            d["confusion"] = self.confusion.tolist()
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, indent=2)

    def to_table(self) -> str:
        """Aligned text table: one row per class, then macro/micro rows."""
        rows = [("Label", "Precision", "Recall", "F1 Score", "Support")]
        for c in range(self.k):
            rows.append((self._name(c), f"{self.precision[c]:.3f}",
                         f"{self.recall[c]:.3f}", f"{self.f1[c]:.3f}",
                         str(int(self.support[c]))))
        rows.append(("macro", f"{self.macro_precision:.3f}", f"{self.macro_recall:.3f}",
                     f"{self.macro_f1:.3f}", str(int(self.support.sum()))))
        rows.append(("micro", f"{self.micro_precision:.3f}", f"{self.micro_recall:.3f}",
                     f"{self.micro_f1:.3f}", str(int(self.support.sum()))))
        widths = [max(len(r[col]) for r in rows) for col in range(5)]
        lines = []
        for ri, row in enumerate(rows):
            lines.append("  ".join(cell.ljust(widths[col]) for col, cell in enumerate(row)))
            if ri == 0:
                lines.append("  ".join("-" * widths[col] for col in range(5)))
        return "\n".join(lines)


def evaluate_multiclass(truth: Sequence[int], pred: Sequence[int], k: int,
                        label_names: Sequence[str] | None = None) -> MetricsReport:
    """Per-class P/R/F1 from the confusion matrix; macro is the unweighted
    class mean, micro pools global counts (equal to accuracy here)."""
    if len(truth) != len(pred):
        raise ValueError(f"length mismatch: {len(truth)} truth vs {len(pred)} predictions")
    truth = np.asarray(truth, dtype=np.int64)
    pred = np.asarray(pred, dtype=np.int64)
    if truth.size and (truth.min() < 0 or truth.max() >= k or pred.min() < 0 or pred.max() >= k):
        raise ValueError(f"label id out of range for k={k}")
    conf = np.zeros((k, k), dtype=np.int64)
    np.add.at(conf, (truth, pred), 1)
    tp = np.diag(conf).astype(np.float64)
    fp = conf.sum(axis=0) - tp
    fn = conf.sum(axis=1) - tp
    return _build_report("multiclass", tp, fp, fn, conf.sum(axis=1), conf,
                         list(label_names or []))


def evaluate_multilabel(truth: Sequence[set[int]], pred: Sequence[set[int]], k: int,
                        label_names: Sequence[str] | None = None) -> MetricsReport:
    """Binary P/R/F1 per label column, aggregated macro and micro."""
    if len(truth) != len(pred):
        raise ValueError(f"length mismatch: {len(truth)} truth vs {len(pred)} predictions")
    tp = np.zeros(k)
    fp = np.zeros(k)
    fn = np.zeros(k)
    support = np.zeros(k, dtype=np.int64)
    for t_set, p_set in zip(truth, pred):
        for c in t_set | p_set:
            if not 0 <= c < k:
                raise ValueError(f"label id {c} out of range for k={k}")
        for c in t_set:
            support[c] += 1
            if c in p_set:
                tp[c] += 1
            else:
                fn[c] += 1
        for c in p_set - t_set:
            fp[c] += 1
    return _build_report("multilabel", tp, fp, fn, support, None, list(label_names or []))


def _build_report(task, tp, fp, fn, support, confusion, label_names) -> MetricsReport:
    k = tp.shape[0]
    precision = np.zeros(k)
    recall = np.zeros(k)
    f1 = np.zeros(k)
    for c in range(k):
        precision[c], recall[c], f1[c] = _prf(tp[c], fp[c], fn[c])
    micro_p, micro_r, micro_f1 = _prf(tp.sum(), fp.sum(), fn.sum())
    return MetricsReport(
        task=task, precision=precision, recall=recall, f1=f1,
        support=np.asarray(support, dtype=np.int64),
        macro_precision=float(precision.mean()), macro_recall=float(recall.mean()),
        macro_f1=float(f1.mean()),
        micro_precision=micro_p, micro_recall=micro_r, micro_f1=micro_f1,
        confusion=confusion, label_names=label_names)
