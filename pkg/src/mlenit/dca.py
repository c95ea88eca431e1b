"""Decision-curve analysis.

Net benefit at threshold probability ``t`` is ``TP/n - FP/n * t / (1 - t)``
with positives called at ``p > t``. Tables always carry the treat-none and
treat-all baselines next to the named model strategies.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .cohort import Cohort
from .errors import ConvergenceError, DataError
from .metrics import ScoredSet, confusion_at_threshold
from .stats import fit_univariable_logistic

TREAT_NONE = "treat_none"
TREAT_ALL = "treat_all"
DEFAULT_GRID = (0.05, 0.50, 0.01)
DEFAULT_RANGES = ((0.05, 0.20), (0.10, 0.30), (0.20, 0.50))
_GRID_TOL = 1e-9


def _check_t(t):
    if not 0 < t < 1:
        raise ValueError(f"threshold probability must lie in (0, 1), got {t}")


def net_benefit(scored, t):
    _check_t(t)
    c = confusion_at_threshold(scored, t)
    return c.tp / c.n - c.fp / c.n * t / (1 - t)


def treat_all_net_benefit(prevalence, t):
    _check_t(t)
    return prevalence - (1 - prevalence) * t / (1 - t)


def threshold_grid(start=0.05, stop=0.50, step=0.01):
    """Inclusive grid ``start, start + step, ..., stop``."""
    if not (0 < start <= stop < 1) or step <= 0:
        raise ValueError("grid needs 0 < start <= stop < 1 and step > 0")
    count = math.floor((stop - start) / step + _GRID_TOL) + 1
    return np.round(start + step * np.arange(count), 12)


@dataclass(frozen=True)
class DcaTable:
    thresholds: np.ndarray
    strategies: tuple
    net_benefit: dict
    n: int
    prevalence: float

    @property
    def models(self):
        return tuple(s for s in self.strategies if s not in (TREAT_NONE, TREAT_ALL))

    def long_rows(self):
        for i, t in enumerate(self.thresholds):
            for s in self.strategies:
                yield float(t), s, float(self.net_benefit[s][i])

    def write_csv(self, fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["threshold", "strategy", "net_benefit"])
        for t, s, nb in self.long_rows():
            w.writerow([repr(t), s, repr(nb)])


def dca_curves(models, grid=DEFAULT_GRID):
    """Net-benefit table for named scored sets that share one cohort's labels."""
    if isinstance(models, ScoredSet):
        models = {models.tag or "model": models}
    models = dict(models)
    if not models:
        raise DataError("at least one model strategy is required")
    names = list(models)
    labels = models[names[0]].require_labels()
    for name in names[1:]:
        if not np.array_equal(models[name].require_labels(), labels):
            raise DataError(f"labels of {name!r} differ from {names[0]!r}: strategies must share one cohort")
    for name in names:
        if name in (TREAT_NONE, TREAT_ALL):
            raise DataError(f"{name!r} is reserved for the baseline strategies")
    ts = threshold_grid(*grid)
    prevalence = float(labels.mean())
    table = {TREAT_NONE: np.zeros(ts.size),
             TREAT_ALL: np.array([treat_all_net_benefit(prevalence, t) for t in ts])}
    for name in names:
        table[name] = np.array([net_benefit(models[name], t) for t in ts])
    return DcaTable(ts, (TREAT_NONE, TREAT_ALL, *names), table, int(labels.size), prevalence)


@dataclass(frozen=True)
class DcaSummary:
    range_means: dict   # (lo, hi) -> {strategy: mean net benefit}
    best_fraction: dict  # model strategy -> share of grid points where it is best

    def to_dict(self):
        return {
            "ranges": [{"lo": lo, "hi": hi, "mean_net_benefit": means}
                       for (lo, hi), means in self.range_means.items()],
            "best_fraction": self.best_fraction,
        }


def summarize_dca(table, ranges=DEFAULT_RANGES):
    """Mean net benefit per closed threshold range, and per-model best-fractions.

    A model is best at a grid point when its net benefit is the maximum among
    model strategies; exact ties share the point equally.
    """
    ts = table.thresholds
    range_means = {}
    for lo, hi in ranges:
        inside = (ts >= lo - _GRID_TOL) & (ts <= hi + _GRID_TOL)
        if not inside.any():
            raise DataError(f"range {lo}-{hi} contains no grid points")
        range_means[(lo, hi)] = {s: float(np.mean(table.net_benefit[s][inside])) for s in table.strategies}
    models = table.models
    share = dict.fromkeys(models, 0.0)
    if models:
        nb = np.vstack([table.net_benefit[m] for m in models])
        best = nb.max(axis=0)
        for j in range(ts.size):
            winners = [m for m, v in zip(models, nb[:, j]) if v == best[j]]
            for m in winners:
                share[m] += 1.0 / len(winners)
        share = {m: v / ts.size for m, v in share.items()}
    return DcaSummary(range_means, share)


@dataclass(frozen=True)
class Fib4Calibration:
    """Univariable logistic risk model on the raw FIB-4 score."""

    intercept: float
    slope: float
    slope_se: float

    def risk(self, fib4):
        z = self.intercept + self.slope * np.asarray(fib4, dtype=np.float64)
        return 0.5 * (1.0 + np.tanh(0.5 * z))

    def score(self, cohort, tag=None):
        labels = cohort.labels() if cohort.is_labeled else None
        return ScoredSet(self.risk(cohort.matrix(("fib4",))[:, 0]), labels, tag or "calibrated FIB-4")


def fit_fib4_calibration(train):
    if not isinstance(train, Cohort):
        raise TypeError("expected a Cohort")
    fit = fit_univariable_logistic(train.matrix(("fib4",))[:, 0], train.labels())
    if not fit.converged:
        raise ConvergenceError(f"FIB-4 calibration fit failed: {fit.diagnostic}")
    return Fib4Calibration(fit.intercept, fit.slope, fit.slope_se)
