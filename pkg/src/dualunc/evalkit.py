"""Metrics (AUC, macro precision/recall/F1) and best/last-epoch run summaries."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .datahub import write_records
from .errors import ArgumentError

SCALAR_METRICS = ("auc", "macro_recall", "macro_precision", "macro_f1", "accuracy")


class UndefinedMetricError(ArgumentError):
    code = "undefined_metric"


def auc(scores, labels) -> float:
    """Mann-Whitney AUC of positive-class scores; tied pairs count one half."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise ArgumentError("scores and labels must be 1-d and of equal length")
    pos = y == 1
    n_pos = int(pos.sum())
    n_neg = int((y == 0).sum())
    if n_pos + n_neg != y.size:
        raise ArgumentError("AUC labels must be binary 0/1")
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC is undefined when only one class is present")
    ranks = rankdata(s)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def confusion_matrix(predictions, labels, k: int) -> np.ndarray:
    """Rows are true classes, columns predicted classes."""
    cm = np.zeros((k, k), dtype=np.int64)
    np.add.at(cm, (np.asarray(labels, dtype=np.int64), np.asarray(predictions, dtype=np.int64)), 1)
    return cm


def _safe_div(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.divide(a, b, out=np.zeros_like(a), where=b > 0)


def per_class_prf(cm: np.ndarray):
    tp = np.diag(cm)
    recall = _safe_div(tp, cm.sum(axis=1))
    precision = _safe_div(tp, cm.sum(axis=0))
    f1 = _safe_div(2 * precision * recall, precision + recall)
    return recall, precision, f1


def macro_prf(predictions, labels, k: int) -> tuple[float, float, float]:
    """Unweighted class means of recall, precision and per-class F1 (0/0 counts as 0)."""
    if np.size(labels) < 1:
        raise ArgumentError("macro metrics need at least one sample")
    r, p, f = per_class_prf(confusion_matrix(predictions, labels, k))
    return float(r.mean()), float(p.mean()), float(f.mean())


def epoch_metrics(probs, labels, k: int | None = None) -> dict:
    """All metrics for one evaluation of a model's probabilities."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    k = probs.shape[1] if k is None else k
    pred = probs.argmax(axis=1)
    cm = confusion_matrix(pred, labels, k)
    r, p, f = per_class_prf(cm)
    out = {
        "macro_recall": float(r.mean()),
        "macro_precision": float(p.mean()),
        "macro_f1": float(f.mean()),
        "accuracy": float(np.trace(cm) / max(cm.sum(), 1)),
        "confusion": cm.tolist(),
    }
    if k == 2 and 0 < labels.sum() < labels.size:
        out["auc"] = auc(probs[:, 1], labels)
    return out


@dataclass
class MetricsReport:
    """Best-epoch (B) and last-three-epoch mean (L) per metric."""

    primary: str
    best_epoch: int
    best: dict = field(default_factory=dict)
    last: dict = field(default_factory=dict)
    n_epochs: int = 0
    short_history: bool = False

    def gap(self, metric: str | None = None) -> float:
        m = metric or self.primary
        return self.best[m] - self.last[m]

    def to_records(self) -> list[dict]:
        return [
            {"type": "summary", "row": "B", "epoch": self.best_epoch, **self.best},
            {"type": "summary", "row": "L", "epochs_averaged": 1 if self.short_history else 3,
             "short_history": self.short_history, **self.last},
        ]


def summarize_run(history: Sequence[dict], primary: str = "macro_f1", prefix: str = "") -> MetricsReport:
    """Summarise a per-epoch metrics history.

    ``B`` is taken per metric as its maximum over epochs (the best epoch index
    follows ``primary``); ``L`` is the mean of the final three epochs, or the
    final epoch alone when fewer than three exist. ``prefix`` selects a family
    of keys such as ``"golden_"``.
    """
    if not history:
        raise ArgumentError("cannot summarise an empty history")
    keys = [m for m in SCALAR_METRICS if all(prefix + m in h for h in history)]
    if primary not in keys:
        raise ArgumentError(f"primary metric {prefix + primary!r} missing from history")
    series = {m: np.array([h[prefix + m] for h in history], dtype=np.float64) for m in keys}
    short = len(history) < 3
    tail = 1 if short else 3
    best_epoch = int(np.argmax(series[primary]))
    return MetricsReport(
        primary=primary,
        best_epoch=int(history[best_epoch].get("epoch", best_epoch)),
        best={m: float(v.max()) for m, v in series.items()},
        last={m: float(v[-tail:].mean()) for m, v in series.items()},
        n_epochs=len(history),
        short_history=short,
    )


def write_metrics_log(path, history: Sequence[dict], report: MetricsReport | None = None) -> None:
    recs = [{"type": "epoch", **h} for h in history]
    if report is not None:
        recs.extend(report.to_records())
    write_records(path, recs)


def export_plot_data(path, history: Sequence[dict]) -> None:
    """CSV of epoch against every scalar metric column present."""
    cols = sorted({c for h in history for c, v in h.items() if isinstance(v, (int, float)) and c != "epoch"})
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", *cols])
        for i, h in enumerate(history):
            w.writerow([h.get("epoch", i), *[repr(float(h[c])) if c in h else "" for c in cols]])
