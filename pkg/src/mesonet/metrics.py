"""Confusion matrix, per-class report, ROC curve and AUC."""

from __future__ import annotations

import csv
import html
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .errors import DataError, UndefinedCurveError


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # [true, predicted]
    class_names: tuple[str, ...]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def to_text(self) -> str:
        names = list(self.class_names)
        width = max(8, *(len(n) for n in names)) + 2
        lines = ["true \\ pred".ljust(width) + "".join(n.rjust(width) for n in names)]
        for name, row in zip(names, self.counts):
            lines.append(name.ljust(width) + "".join(str(int(v)).rjust(width) for v in row))
        return "\n".join(lines)


def confusion_matrix(
    true_labels: Sequence[int],
    predicted_labels: Sequence[int],
    num_classes: int,
    class_names: Sequence[str] | None = None,
) -> ConfusionMatrix:
    t = np.asarray(true_labels, dtype=np.int64)
    p = np.asarray(predicted_labels, dtype=np.int64)
    if t.shape != p.shape:
        raise DataError(f"{len(t)} true labels but {len(p)} predictions")
    for arr, what in ((t, "true"), (p, "predicted")):
        bad = arr[(arr < 0) | (arr >= num_classes)]
        if bad.size:
            raise DataError(f"{what} label {int(bad[0])} outside [0, {num_classes})")
    counts = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(counts, (t, p), 1)
    if class_names is None:
        class_names = [str(i) for i in range(num_classes)]
    return ConfusionMatrix(counts, tuple(class_names))


@dataclass
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass
class ClassificationReport:
    class_names: tuple[str, ...]
    per_class: list[ClassMetrics]
    accuracy: float
    macro: ClassMetrics
    weighted: ClassMetrics
    warnings: list[str] = field(default_factory=list)

    @property
    def total(self) -> int:
        return sum(m.support for m in self.per_class)

    def to_dict(self) -> dict:
        row = lambda m: {  # noqa: E731
            "precision": m.precision,
            "recall": m.recall,
            "f1": m.f1,
            "support": m.support,
        }
        return {
            "classes": {n: row(m) for n, m in zip(self.class_names, self.per_class)},
            "accuracy": self.accuracy,
            "macro_average": row(self.macro),
            "weighted_average": row(self.weighted),
            "total": self.total,
            "warnings": list(self.warnings),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_text(self, digits: int = 4) -> str:
        labels = list(self.class_names) + ["Accuracy", "Macro average", "Weighted average"]
        lw = max(len(s) for s in labels) + 2
        cols = ["Precision", "Recall", "F1 Score", "Support"]
        cw = max(max(len(c) for c in cols), digits + 3) + 2
        f = lambda v: f"{v:.{digits}f}".rjust(cw)  # noqa: E731
        line = lambda name, m: (  # noqa: E731
            name.ljust(lw) + f(m.precision) + f(m.recall) + f(m.f1) + str(m.support).rjust(cw)
        )
        out = ["Class".ljust(lw) + "".join(c.rjust(cw) for c in cols)]
        out += [line(n, m) for n, m in zip(self.class_names, self.per_class)]
        out.append("")
        out.append("Accuracy".ljust(lw) + " " * (2 * cw) + f(self.accuracy) + str(self.total).rjust(cw))
        out.append(line("Macro average", self.macro))
        out.append(line("Weighted average", self.weighted))
        return "\n".join(out) + "\n"


def _ratio(num: int, den: int, what: str, warnings: list[str]) -> Fraction:
    if den == 0:
        warnings.append(f"{what} is undefined (zero denominator); reported as 0")
        return Fraction(0)
    return Fraction(num, den)


def classification_report(cm: ConfusionMatrix) -> ClassificationReport:
    """Per-class precision/recall/F1 with macro and support-weighted averages.

    Arithmetic is exact (rationals) until the final conversion to float, so
    identities such as weighted recall == accuracy hold bit for bit.
    """
    counts = np.asarray(cm.counts, dtype=np.int64)
    total = int(counts.sum())
    if total == 0:
        raise DataError("classification report of an empty confusion matrix")
    warnings: list[str] = []
    rows = counts.sum(axis=1)
    cols = counts.sum(axis=0)
    prec, rec, f1, sup = [], [], [], []
    for c, name in enumerate(cm.class_names):
        d = int(counts[c, c])
        p = _ratio(d, int(cols[c]), f"precision of {name}", warnings)
        r = _ratio(d, int(rows[c]), f"recall of {name}", warnings)
        prec.append(p)
        rec.append(r)
        f1.append(2 * p * r / (p + r) if p + r > 0 else Fraction(0))
        sup.append(int(rows[c]))

    n = len(sup)
    macro = ClassMetrics(
        float(sum(prec) / n), float(sum(rec) / n), float(sum(f1) / n), total
    )
    wavg = lambda vals: float(sum(v * s for v, s in zip(vals, sup)) / total)  # noqa: E731
    weighted = ClassMetrics(wavg(prec), wavg(rec), wavg(f1), total)
    per_class = [
        ClassMetrics(float(p), float(r), float(f), s) for p, r, f, s in zip(prec, rec, f1, sup)
    ]
    accuracy = float(Fraction(int(np.trace(counts)), total))
    return ClassificationReport(tuple(cm.class_names), per_class, accuracy, macro, weighted, warnings)


@dataclass
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    # exact cumulative counts behind each point, when built by roc_curve
    tp: np.ndarray | None = None
    fp: np.ndarray | None = None
    positives: int = 0
    negatives: int = 0

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["threshold", "fpr", "tpr"])
            for t, x, y in zip(self.thresholds, self.fpr, self.tpr):
                w.writerow(["inf" if math.isinf(t) else repr(float(t)), repr(float(x)), repr(float(y))])

    def to_svg(self, title: str = "ROC", size: int = 400) -> str:
        return roc_svg(self, title, size)


def roc_curve(scores: Sequence[float], labels: Sequence[int]) -> RocCurve:
    """ROC points for scores where higher means more likely positive.

    Tied scores form one threshold group, so each distinct score adds one point.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise DataError("scores and labels must be equal-length 1-D sequences")
    if not np.all((y == 0) | (y == 1)):
        raise DataError("ROC labels must be 0 or 1")
    pos = int(np.sum(y == 1))
    neg = len(y) - pos
    if pos == 0 or neg == 0:
        raise UndefinedCurveError("ROC needs at least one positive and one negative label")

    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    # last index of each tied group
    ends = np.r_[np.nonzero(np.diff(s))[0], len(s) - 1]
    tp = np.r_[0, np.cumsum(y == 1)[ends]].astype(np.int64)
    fp = np.r_[0, np.cumsum(y == 0)[ends]].astype(np.int64)
    thresholds = np.r_[np.inf, s[ends]]
    return RocCurve(fp / neg, tp / pos, thresholds, tp, fp, pos, neg)


def auc(curve: RocCurve) -> float:
    """Trapezoidal area under the curve."""
    if curve.tp is not None and curve.fp is not None:
        # integer trapezoid numerators keep 1.0 and 0.5 exact
        dfp = np.diff(curve.fp)
        height = curve.tp[1:] + curve.tp[:-1]
        num = int(np.sum(dfp * height))
        return float(Fraction(num, 2 * curve.positives * curve.negatives))
    x, y = np.asarray(curve.fpr, float), np.asarray(curve.tpr, float)
    return float(np.sum(np.diff(x) * (y[1:] + y[:-1]) / 2))


def roc_svg(curve: RocCurve, title: str = "ROC", size: int = 400) -> str:
    """Standalone SVG line plot with the chance diagonal."""
    m = 50
    inner = size - 2 * m
    px = lambda v: m + v * inner  # noqa: E731
    py = lambda v: size - m - v * inner  # noqa: E731
    pts = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in zip(curve.fpr, curve.tpr))
    ticks = []
    for i in range(6):
        v = i / 5
        ticks.append(
            f'<text x="{px(v):.1f}" y="{size - m + 18}" text-anchor="middle" font-size="11">{v:.1f}</text>'
        )
        ticks.append(
            f'<text x="{m - 8}" y="{py(v) + 4:.1f}" text-anchor="end" font-size="11">{v:.1f}</text>'
        )
    area = auc(curve)
    return "\n".join(
        [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
            f'viewBox="0 0 {size} {size}">',
            f'<rect width="{size}" height="{size}" fill="white"/>',
            f'<rect x="{m}" y="{m}" width="{inner}" height="{inner}" fill="none" stroke="black"/>',
            f'<line x1="{px(0)}" y1="{py(0)}" x2="{px(1)}" y2="{py(1)}" '
            'stroke="gray" stroke-dasharray="4 4"/>',
            f'<polyline points="{pts}" fill="none" stroke="crimson" stroke-width="2"/>',
            *ticks,
            f'<text x="{size / 2}" y="{size - 10}" text-anchor="middle" font-size="12">'
            "False Positive Rate</text>",
            f'<text x="14" y="{size / 2}" text-anchor="middle" font-size="12" '
            f'transform="rotate(-90 14 {size / 2})">True Positive Rate</text>',
            f'<text x="{size / 2}" y="{m - 15}" text-anchor="middle" font-size="14">'
            f"{html.escape(title)} (AUC = {area:.4f})</text>",
            "</svg>",
            "",
        ]
    )
