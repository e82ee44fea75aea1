"""Multiclass evaluation: confusion matrices, one-vs-rest counts and rates,
macro averages, ROC curves with trapezoidal AUC, and tabular reports."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from typing import Sequence

import numpy as np

METRIC_FIELDS = ("accuracy", "precision", "recall", "specificity", "f1")
TABLE_FIELDS = ("accuracy", "precision", "recall", "f1")
TABLE_HEADER = ("AI Models", "Types", "Accuracy", "Precision", "Recall", "F1-Score")


class MetricsError(ValueError):
    pass


@dataclass
class ConfusionMatrix:
    counts: np.ndarray
    class_names: list[str]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    def accuracy(self) -> float:
        """Top-1 multiclass accuracy, trace / N."""
        return float(np.trace(self.counts) / self.total)

    def to_dict(self) -> dict:
        return {"class_names": list(self.class_names), "counts": self.counts.tolist()}


@dataclass(frozen=True)
class OvrCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass
class ClassMetrics:
    accuracy: float
    precision: float
    recall: float
    specificity: float
    f1: float
    degenerate_flags: frozenset = field(default_factory=frozenset)

    def as_dict(self) -> dict:
        d = {k: getattr(self, k) for k in METRIC_FIELDS}
        d["degenerate"] = sorted(self.degenerate_flags)
        return d


@dataclass
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auc: float

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.fpr.tolist(), self.tpr.tolist()))


@dataclass
class MulticlassRoc:
    curves: dict[int, RocCurve]
    macro_auc: float
    warnings: list[str] = field(default_factory=list)


@dataclass
class MetricsReport:
    class_names: list[str]
    rows: list[ClassMetrics]
    average: ClassMetrics
    confusion: ConfusionMatrix
    aucs: dict[int, float]
    macro_auc: float
    overall_accuracy: float
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "class_names": list(self.class_names),
            "per_class": {n: r.as_dict() for n, r in zip(self.class_names, self.rows)},
            "average": self.average.as_dict(),
            "overall_accuracy": self.overall_accuracy,
            "confusion_matrix": self.confusion.counts.tolist(),
            "auc": {self.class_names[c]: a for c, a in self.aucs.items()},
            "macro_auc": self.macro_auc,
            "warnings": list(self.warnings),
        }


def _labels(y, name: str) -> np.ndarray:
    arr = np.asarray(y)
    if arr.ndim != 1:
        raise MetricsError(f"{name} must be one-dimensional")
    if arr.size and not np.issubdtype(arr.dtype, np.integer):
        if not np.all(arr == np.round(arr)):
            raise MetricsError(f"{name} must contain integer labels")
        arr = arr.astype(np.int64)
    return arr.astype(np.int64)


def confusion_matrix(y_true, y_pred, num_classes: int, class_names: Sequence[str] | None = None) -> ConfusionMatrix:
    """Rows index the true class, columns the predicted class."""
    t, p = _labels(y_true, "y_true"), _labels(y_pred, "y_pred")
    if t.size != p.size:
        raise MetricsError(f"length mismatch: {t.size} true labels vs {p.size} predictions")
    if t.size == 0:
        raise MetricsError("confusion matrix needs at least one sample")
    for arr, name in ((t, "y_true"), (p, "y_pred")):
        if arr.min() < 0 or arr.max() >= num_classes:
            raise MetricsError(f"{name} contains labels outside [0, {num_classes})")
    counts = np.bincount(t * num_classes + p, minlength=num_classes * num_classes)
    names = list(class_names) if class_names is not None else [str(i) for i in range(num_classes)]
    return ConfusionMatrix(counts.reshape(num_classes, num_classes), names)


def ovr_counts(cm: ConfusionMatrix, c: int) -> OvrCounts:
    if not 0 <= c < cm.num_classes:
        raise MetricsError(f"class index {c} outside [0, {cm.num_classes})")
    k = cm.counts
    tp = int(k[c, c])
    fn = int(k[c, :].sum()) - tp
    fp = int(k[:, c].sum()) - tp
    tn = cm.total - tp - fn - fp
    return OvrCounts(tp=tp, fp=fp, tn=tn, fn=fn)


def _ratio(num: float, den: float, name: str, flags: set) -> float:
    if den == 0:
        flags.add(name)
        return 0.0
    return num / den


def class_metrics(oc: OvrCounts) -> ClassMetrics:
    """Binary rates for one class treated as positive.

    A zero denominator yields 0.0 and records the metric name in
    ``degenerate_flags``.
    """
    if oc.total <= 0:
        raise MetricsError("class_metrics needs a non-empty count table")
    flags: set[str] = set()
    accuracy = (oc.tp + oc.tn) / oc.total
    precision = _ratio(oc.tp, oc.tp + oc.fp, "precision", flags)
    recall = _ratio(oc.tp, oc.tp + oc.fn, "recall", flags)
    specificity = _ratio(oc.tn, oc.tn + oc.fp, "specificity", flags)
    f1 = _ratio(2 * precision * recall, precision + recall, "f1", flags)
    return ClassMetrics(accuracy, precision, recall, specificity, f1, frozenset(flags))


def macro_average(rows: Sequence[ClassMetrics]) -> ClassMetrics:
    if not rows:
        raise MetricsError("macro_average of an empty list")
    means = {k: float(np.mean([getattr(r, k) for r in rows])) for k in METRIC_FIELDS}
    flags = frozenset().union(*(r.degenerate_flags for r in rows))
    return ClassMetrics(**means, degenerate_flags=flags)


def roc_curve(y_true_binary, scores) -> RocCurve:
    """Threshold sweep over distinct scores, highest first.

    Tied scores share one threshold, so a block of ties contributes a single
    diagonal segment. The first threshold is a sentinel above every score,
    giving the (0, 0) start point.
    """
    y = np.asarray(y_true_binary).astype(np.int64).ravel()
    s = np.asarray(scores, dtype=np.float64).ravel()
    if y.size != s.size:
        raise MetricsError(f"length mismatch: {y.size} labels vs {s.size} scores")
    if not np.isin(y, (0, 1)).all():
        raise MetricsError("binary labels must be 0 or 1")
    n_pos = int(y.sum())
    n_neg = int(y.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise MetricsError("ROC/AUC undefined: ground truth contains a single class")

    order = np.argsort(-s, kind="mergesort")
    s_sorted, y_sorted = s[order], y[order]
    # last index of each run of equal scores
    last = np.r_[np.nonzero(np.diff(s_sorted))[0], s_sorted.size - 1]
    tps = np.cumsum(y_sorted)[last]
    fps = (last + 1) - tps
    tpr = np.r_[0.0, tps / n_pos]
    fpr = np.r_[0.0, fps / n_neg]
    thresholds = np.r_[s_sorted[0] + 1.0, s_sorted[last]]
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))
    return RocCurve(fpr, tpr, thresholds, auc)


def multiclass_roc(y_true, probs) -> MulticlassRoc:
    """One-vs-rest curves using column c of ``probs`` as the score for class c."""
    t = _labels(y_true, "y_true")
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 2 or p.shape[0] != t.size:
        raise MetricsError(f"probs must be N x C with N={t.size}, got shape {p.shape}")
    curves, warnings = {}, []
    for c in range(p.shape[1]):
        pos = t == c
        if pos.all() or not pos.any():
            warnings.append(f"class {c}: {'no' if not pos.any() else 'only'} positive samples; ROC omitted")
            continue
        curves[c] = roc_curve(pos.astype(np.int64), p[:, c])
    macro = float(np.mean([r.auc for r in curves.values()])) if curves else float("nan")
    return MulticlassRoc(curves, macro, warnings)


def build_report(y_true, y_pred, probs, class_names: Sequence[str]) -> MetricsReport:
    names = list(class_names)
    cm = confusion_matrix(y_true, y_pred, len(names), names)
    rows = [class_metrics(ovr_counts(cm, c)) for c in range(len(names))]
    roc = multiclass_roc(y_true, probs)
    return MetricsReport(
        class_names=names,
        rows=rows,
        average=macro_average(rows),
        confusion=cm,
        aucs={c: r.auc for c, r in roc.curves.items()},
        macro_auc=roc.macro_auc,
        overall_accuracy=cm.accuracy(),
        warnings=roc.warnings,
    )


def round_half_up(x: float, places: int = 2) -> float:
    q = Decimal(1).scaleb(-places)
    return float(Decimal(repr(float(x))).quantize(q, rounding=ROUND_HALF_UP))


def fmt2(x: float) -> str:
    return f"{round_half_up(x, 2):.2f}"


def table_rows(model_name: str, report: MetricsReport) -> list[list[str]]:
    """Rows for one model block: one per class plus the Average row."""
    rows = []
    for name, r in zip(report.class_names, report.rows):
        rows.append([model_name, name] + [fmt2(getattr(r, k)) for k in TABLE_FIELDS])
    rows.append([model_name, "Average"] + [fmt2(getattr(report.average, k)) for k in TABLE_FIELDS])
    return rows


def render_csv(reports: dict[str, MetricsReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TABLE_HEADER)
    for model_name, rep in reports.items():
        w.writerows(table_rows(model_name, rep))
    return buf.getvalue()


def render_text(reports: dict[str, MetricsReport]) -> str:
    lines = [TABLE_HEADER] + [tuple(r) for name, rep in reports.items() for r in table_rows(name, rep)]
    widths = [max(len(row[i]) for row in lines) for i in range(len(TABLE_HEADER))]
    return "\n".join("  ".join(cell.ljust(w) for cell, w in zip(row, widths)) for row in lines)


def reports_to_json(reports: dict[str, MetricsReport]) -> str:
    return json.dumps({"models": {k: v.to_dict() for k, v in reports.items()}}, indent=2)
