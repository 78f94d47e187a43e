"""Confusion counts and accuracy / precision / recall / F1 with three averagings.

``PerClassPositive`` treats fall (label 1) as the positive class::

    accuracy  = (TP + TN) / (TP + FN + TN + FP)
    precision = TP / (TP + FP)
    recall    = TP / (TP + FN)
    F1        = 2 * precision * recall / (precision + recall)

``Micro`` pools per-class TP/FP/FN over both classes, which for a
single-label two-class problem makes precision = recall = F1 = accuracy.
``Weighted`` averages the per-class scores by class support, which makes
recall = accuracy. Everything is computed with :class:`fractions.Fraction`
and rounded to float once, so these identities hold exactly.

Division by zero yields 0 and is recorded in ``MetricsReport.zero_division``.
"""
from __future__ import annotations

import csv
import enum
import io
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import InputError


class Averaging(str, enum.Enum):
    PER_CLASS_POSITIVE = "PerClassPositive"
    MICRO = "Micro"
    WEIGHTED = "Weighted"


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise InputError(f"confusion counts must be nonnegative: {self}")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def swapped(self) -> "ConfusionCounts":
        """Counts with the negative class taken as positive."""
        return ConfusionCounts(tp=self.tn, fp=self.fn, tn=self.tp, fn=self.fp)

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp, self.tn + other.tn, self.fn + other.fn)


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    averaging: Averaging
    zero_division: tuple = field(default=())

    def as_row(self) -> tuple[float, float, float, float]:
        return self.accuracy, self.precision, self.recall, self.f1


def confusion(predictions, truths) -> ConfusionCounts:
    p = np.asarray(predictions)
    t = np.asarray(truths)
    if p.shape != t.shape or p.ndim != 1:
        raise InputError(f"predictions {p.shape} and truths {t.shape} must be equal-length 1D sequences")
    if p.size == 0:
        raise InputError("cannot build a confusion matrix from zero examples")
    if not (np.isin(p, (0, 1)).all() and np.isin(t, (0, 1)).all()):
        raise InputError("labels must be 0 or 1")
    p = p.astype(bool)
    t = t.astype(bool)
    return ConfusionCounts(
        tp=int(np.sum(p & t)), fp=int(np.sum(p & ~t)), tn=int(np.sum(~p & ~t)), fn=int(np.sum(~p & t)))


def _ratio(num, den, flag, flags):
    if den == 0:
        flags.append(flag)
        return Fraction(0)
    return Fraction(num, den) if isinstance(num, int) else num / den


def _class_scores(tp, fp, fn, tag, flags):
    precision = _ratio(tp, tp + fp, f"precision[{tag}]", flags)
    recall = _ratio(tp, tp + fn, f"recall[{tag}]", flags)
    f1 = _ratio(2 * precision * recall, precision + recall, f"f1[{tag}]", flags)
    return precision, recall, f1


def metrics(counts, averaging=Averaging.PER_CLASS_POSITIVE) -> MetricsReport:
    """Scores from :class:`ConfusionCounts` or a ``(predictions, truths)`` pair."""
    if not isinstance(counts, ConfusionCounts):
        counts = confusion(*counts)
    averaging = Averaging(averaging)
    if counts.total == 0:
        raise InputError("metrics need at least one example")
    tp, fp, tn, fn = counts.tp, counts.fp, counts.tn, counts.fn
    flags: list[str] = []
    accuracy = Fraction(tp + tn, counts.total)
    if averaging is Averaging.PER_CLASS_POSITIVE:
        precision, recall, f1 = _class_scores(tp, fp, fn, "fall", flags)
    elif averaging is Averaging.MICRO:
        pooled_tp, pooled_fp, pooled_fn = tp + tn, fp + fn, fn + fp
        precision = _ratio(pooled_tp, pooled_tp + pooled_fp, "precision[micro]", flags)
        recall = _ratio(pooled_tp, pooled_tp + pooled_fn, "recall[micro]", flags)
        f1 = _ratio(2 * precision * recall, precision + recall, "f1[micro]", flags)
    else:
        pos = _class_scores(tp, fp, fn, "fall", flags)
        neg = _class_scores(tn, fn, fp, "no_fall", flags)
        w_pos, w_neg = tp + fn, tn + fp
        precision, recall, f1 = (
            (w_pos * a + w_neg * b) / counts.total for a, b in zip(pos, neg))
    return MetricsReport(float(accuracy), float(precision), float(recall), float(f1), averaging, tuple(flags))


def all_averagings(counts) -> list[MetricsReport]:
    return [metrics(counts, a) for a in Averaging]


METRICS_COLUMNS = ("variant", "split", "averaging", "accuracy", "precision", "recall", "f1")


def metrics_rows(variant: str, split: str, counts) -> list[tuple]:
    return [(variant, split, r.averaging.value) + r.as_row() for r in all_averagings(counts)]


def format_metrics_csv(rows) -> str:
    """CSV text with header ``variant,split,averaging,accuracy,precision,recall,f1``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRICS_COLUMNS)
    for row in rows:
        w.writerow([row[0], row[1], row[2]] + [repr(float(v)) for v in row[3:]])
    return buf.getvalue()
