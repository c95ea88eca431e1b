"""Operating-point metrics and ROC analysis.

Positives are called with a strict inequality, ``score > threshold``. The
"thresholded ROC-AUC" reported throughout is the area under the ROC curve
of the binarized classifier, which collapses to balanced accuracy
``(sensitivity + specificity) / 2``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .errors import DataError


@dataclass(frozen=True, eq=False)
class ScoredSet:
    """Scores for one model on one cohort, aligned with the true labels.

    ``is_probability=False`` marks raw score axes such as FIB-4, which are
    only used with thresholded metrics and rank AUC.
    """

    scores: np.ndarray
    labels: Optional[np.ndarray] = None
    tag: str = ""
    is_probability: bool = True
    ids: Optional[tuple] = None

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=np.float64).reshape(-1)
        if scores.size == 0:
            raise DataError("scored set is empty")
        if not np.all(np.isfinite(scores)):
            raise DataError("scores must be finite")
        if self.is_probability and (scores.min() < 0 or scores.max() > 1):
            raise DataError("probabilities must lie in [0, 1]")
        object.__setattr__(self, "scores", scores)
        if self.labels is not None:
            labels = np.asarray(self.labels).reshape(-1)
            if labels.shape != scores.shape:
                raise DataError(f"{labels.size} labels for {scores.size} scores")
            if not np.all((labels == 0) | (labels == 1)):
                raise DataError("labels must be 0 or 1")
            object.__setattr__(self, "labels", labels.astype(np.int64))

    def __len__(self):
        return self.scores.size

    def require_labels(self):
        if self.labels is None:
            raise DataError(f"scored set {self.tag!r} has no labels")
        return self.labels

    def take(self, idx):
        return ScoredSet(self.scores[idx], None if self.labels is None else self.labels[idx],
                         self.tag, self.is_probability)

    def binarized(self, threshold):
        return ScoredSet((self.scores > threshold).astype(np.float64), self.labels, self.tag)


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int
    threshold: float

    @property
    def n(self):
        return self.tp + self.fp + self.tn + self.fn

    @property
    def n_pos(self):
        return self.tp + self.fn

    @property
    def n_neg(self):
        return self.tn + self.fp


def confusion_at_threshold(scored, threshold):
    y = scored.require_labels()
    pred = scored.scores > threshold
    tp = int(np.sum(pred & (y == 1)))
    fp = int(np.sum(pred & (y == 0)))
    fn = int(np.sum(~pred & (y == 1)))
    tn = int(np.sum(~pred & (y == 0)))
    return ConfusionCounts(tp, fp, tn, fn, float(threshold))


@dataclass
class MetricReport:
    """Operating-point metrics; ``None`` marks a value with a zero denominator."""

    sensitivity: Optional[float]
    specificity: Optional[float]
    accuracy: float
    f1: float
    thresholded_auc: Optional[float]
    probability_auc: Optional[float] = None
    counts: Optional[ConfusionCounts] = None
    ci: dict = field(default_factory=dict)

    METRICS = ("sensitivity", "specificity", "accuracy", "f1", "thresholded_auc", "probability_auc")

    def to_dict(self):
        out = {}
        for name in self.METRICS:
            entry = {"value": getattr(self, name)}
            if name in self.ci:
                entry["ci"] = list(self.ci[name])
            out[name] = entry
        if self.counts is not None:
            out["counts"] = asdict(self.counts)
        return out

    def rows(self, cohort="", model=""):
        """Flat ``(cohort, model, metric, value, ci_lo, ci_hi)`` rows."""
        for name in self.METRICS:
            lo, hi = self.ci.get(name, (None, None))
            yield cohort, model, name, getattr(self, name), lo, hi


def metric_report(counts):
    if counts.n == 0:
        raise DataError("no records to report on")
    sens = counts.tp / counts.n_pos if counts.n_pos else None
    spec = counts.tn / counts.n_neg if counts.n_neg else None
    denom = 2 * counts.tp + counts.fp + counts.fn
    f1 = 2 * counts.tp / denom if denom else 0.0
    bal = (sens + spec) / 2 if sens is not None and spec is not None else None
    return MetricReport(sens, spec, (counts.tp + counts.tn) / counts.n, f1, bal, counts=counts)


def thresholded_auc(scored, threshold=0.5):
    c = confusion_at_threshold(scored, threshold)
    if c.n_pos == 0 or c.n_neg == 0:
        raise DataError("thresholded AUC undefined: both classes required")
    return (c.tp / c.n_pos + c.tn / c.n_neg) / 2


def midranks(x):
    """1-based ranks with ties sharing the mean of their positions."""
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    # boundaries of runs of equal values
    starts = np.r_[0, np.flatnonzero(np.diff(xs)) + 1]
    ends = np.r_[starts[1:], xs.size]
    avg = (starts + ends + 1) / 2.0
    ranks = np.empty(xs.size)
    ranks[order] = np.repeat(avg, ends - starts)
    return ranks


def probability_auc(scored):
    """Rank-statistic AUC: P(score_pos > score_neg) + 0.5 P(tie)."""
    y = scored.require_labels()
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DataError("AUC undefined: both classes required")
    r = midranks(scored.scores)
    u = r[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def roc_curve(scored):
    """ROC points ``(fpr, tpr, threshold)`` from (0, 0) to (1, 1).

    One point per distinct score, sweeping thresholds from high to low; the
    first point carries threshold ``inf``.
    """
    y = scored.require_labels()
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DataError("ROC curve undefined: both classes required")
    order = np.argsort(-scored.scores, kind="mergesort")
    s = scored.scores[order]
    ys = y[order]
    last = np.r_[np.flatnonzero(np.diff(s)), s.size - 1]
    tps = np.cumsum(ys)[last]
    fps = (last + 1) - tps
    points = [(0.0, 0.0, float("inf"))]
    points += [(fp / n_neg, tp / n_pos, float(t)) for fp, tp, t in zip(fps, tps, s[last])]
    return points


def trapezoid_area(points):
    fpr = np.array([p[0] for p in points])
    tpr = np.array([p[1] for p in points])
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))


def evaluate(scored, threshold=0.5, with_probability_auc=True):
    """Full metric report for one scored set at one operating threshold."""
    report = metric_report(confusion_at_threshold(scored, threshold))
    if with_probability_auc:
        report.probability_auc = probability_auc(scored)
    return report


def report_json(report, config):
    return json.dumps({"config": config, "metrics": report.to_dict()}, indent=2) + "\n"
