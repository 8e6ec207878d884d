"""Dataset-level evaluation: confusion matrix, per-class metrics, top-k accuracy.

All metrics derive from the confusion matrix (or the raw logit rows for
top-k), so they are scale-invariant in the counts and exactly reproducible.
Macro averages are unweighted means over classes; 0/0 metric cells are
defined as 0 and logged.
"""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import data as D
from . import graph as G
from .tensor import Tensor

log = logging.getLogger(__name__)

REPORT_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class ConfusionMatrix:
    """Square count grid: rows are true classes, columns predicted classes."""

    counts: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.counts, dtype=np.int64)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError(f"confusion matrix must be square, got {a.shape}")
        if np.any(a < 0):
            raise ValueError("confusion matrix counts must be non-negative")
        object.__setattr__(self, "counts", a)

    @classmethod
    def empty(cls, num_classes: int) -> "ConfusionMatrix":
        return cls(np.zeros((num_classes, num_classes), dtype=np.int64))

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def accuracy(self) -> float:
        return float(np.trace(self.counts) / self.total) if self.total else 0.0


@dataclass(frozen=True)
class ClassMetrics:
    precision: float
    recall: float
    f1: float


@dataclass(frozen=True)
class EvalReport:
    confusion: ConfusionMatrix
    per_class: tuple[ClassMetrics, ...]
    macro: ClassMetrics
    top1: float
    top5: float
    n_evaluated: int
    n_skipped: int = 0

    def to_json_dict(self) -> dict:
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "n_evaluated": self.n_evaluated,
            "n_skipped": self.n_skipped,
            "top1": self.top1,
            "top5": self.top5,
            "macro": vars(self.macro).copy(),
            "per_class": [
                {"class_id": i, **vars(m)} for i, m in enumerate(self.per_class)
            ],
            "confusion": self.confusion.counts.tolist(),
        }


def _safe_div(num: float, den: float, what: str) -> float:
    if den == 0:
        log.warning("%s is 0/0; defining it as 0", what)
        return 0.0
    return num / den


def metrics_from_confusion(cm: ConfusionMatrix) -> tuple[tuple[ClassMetrics, ...], ClassMetrics]:
    """Per-class precision/recall/F1 and their unweighted (macro) means."""
    counts = cm.counts
    per_class = []
    for j in range(cm.num_classes):
        tp = float(counts[j, j])
        precision = _safe_div(tp, float(counts[:, j].sum()), f"precision[{j}]")
        recall = _safe_div(tp, float(counts[j, :].sum()), f"recall[{j}]")
        f1 = _safe_div(2 * precision * recall, precision + recall, f"f1[{j}]")
        per_class.append(ClassMetrics(precision, recall, f1))
    macro = ClassMetrics(
        precision=sum(m.precision for m in per_class) / len(per_class),
        recall=sum(m.recall for m in per_class) / len(per_class),
        f1=sum(m.f1 for m in per_class) / len(per_class),
    )
    return tuple(per_class), macro


def top_k(logits: np.ndarray, labels: np.ndarray, k: int) -> float:
    """Fraction of rows whose true label is among the k largest logits.

    Ties are broken toward the lower class index, deterministically.
    """
    logits = np.asarray(logits)
    labels = np.asarray(labels)
    if k > logits.shape[1]:
        raise ValueError(f"k={k} exceeds {logits.shape[1]} classes")
    hits = 0
    for row, label in zip(logits, labels):
        order = np.argsort(-row, kind="stable")  # stable: ties keep lower index first
        if label in order[:k]:
            hits += 1
    return hits / len(labels) if len(labels) else 0.0


def evaluate(model: G.Model, samples: list[D.Sample], workers: int = 1,
             batch_size: int = 16) -> EvalReport:
    """Preprocess, forward, and score a sample list against its labels.

    Unreadable images are logged, excluded, and counted in n_skipped.
    Inference may fan out across workers; the confusion matrix is merged by
    integer addition, so the result is order-independent.
    """
    if not samples:
        raise ValueError("evaluate needs a non-empty sample list")
    nc = model.config.num_classes

    def load(sample: D.Sample) -> Tensor | None:
        try:
            return D.preprocess(sample.path)
        except D.ImageDecodeError as e:
            log.warning("skipping unreadable sample: %s", e)
            return None

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            tensors = list(pool.map(load, samples))
    else:
        tensors = [load(s) for s in samples]

    kept = [(t, s.class_id) for t, s in zip(tensors, samples) if t is not None]
    n_skipped = len(samples) - len(kept)
    if not kept:
        raise ValueError("no readable samples to evaluate")

    logits_rows = []
    for at in range(0, len(kept), batch_size):
        chunk = kept[at : at + batch_size]
        batch = Tensor(np.concatenate([t.data for t, _ in chunk], axis=0))
        logits_rows.append(G.forward(model, batch))
    logits = np.concatenate(logits_rows, axis=0)
    labels = np.array([c for _, c in kept], dtype=np.int64)

    counts = np.zeros((nc, nc), dtype=np.int64)
    preds = logits.argmax(axis=1)  # argmax takes the first maximum: lower index on ties
    np.add.at(counts, (labels, preds), 1)
    cm = ConfusionMatrix(counts)

    per_class, macro = metrics_from_confusion(cm)
    return EvalReport(
        confusion=cm,
        per_class=per_class,
        macro=macro,
        top1=top_k(logits, labels, 1),
        top5=top_k(logits, labels, min(5, nc)),
        n_evaluated=len(kept),
        n_skipped=n_skipped,
    )


def write_report_json(report: EvalReport, path: str | Path) -> None:
    Path(path).write_text(json.dumps(report.to_json_dict(), indent=2, sort_keys=True) + "\n")


def write_confusion_csv(cm: ConfusionMatrix, path: str | Path) -> None:
    """Confusion grid as CSV: header row of predicted classes, one row per true class."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["true\\pred"] + [f"c{j}" for j in range(cm.num_classes)])
        for i in range(cm.num_classes):
            writer.writerow([f"c{i}"] + cm.counts[i].tolist())
