"""Resampling and diagnostics around scored sets and trained models.

Every stochastic task draws from a generator keyed by ``(seed, task
index)``, so results do not depend on how many workers run them or in
what order they finish.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ._util import check_seed, derived_rng
from .calibration import brier
from .cohort import FEATURES
from .errors import DataError, NumericError
from .metrics import ScoredSet, probability_auc, thresholded_auc
from .sdnn import DEFAULT_WIDTHS, predict, train

MAX_REDRAWS = 10


def _map(fn, items, workers):
    if workers is None or workers <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _statistic(name, threshold):
    """``(function, needs_both_classes)`` for a statistic name."""
    if name == "thresholded_auc":
        return (lambda s: thresholded_auc(s, threshold)), True
    if name == "probability_auc":
        return probability_auc, True
    if name == "brier":
        return brier, False
    raise ValueError(f"unknown statistic {name!r}; use thresholded_auc, probability_auc or brier")


@dataclass(frozen=True)
class BootstrapResult:
    statistic: str
    estimate: float
    ci_lo: float
    ci_hi: float
    b: int
    b_effective: int
    redraws: int
    seed: int
    threshold: Optional[float] = None

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def bootstrap_ci(scored, statistic="probability_auc", b=2000, seed=0, threshold=0.5, workers=1):
    """Percentile 95% interval from ``b`` row resamples with replacement.

    Resamples holding a single class are redrawn (up to 10 times) for the
    AUC statistics; a resample that stays degenerate is skipped and
    ``b_effective`` drops. Fewer than ``0.9 * b`` usable resamples is an
    error.
    """
    seed = check_seed(seed)
    if b < 1:
        raise ValueError("b must be positive")
    fn, needs_both = _statistic(statistic, threshold)
    y = scored.require_labels()
    estimate = fn(scored)
    n = len(scored)

    def one(i):
        rng = derived_rng(seed, i)
        for attempt in range(MAX_REDRAWS):
            idx = rng.integers(0, n, n)
            if needs_both and y[idx].min() == y[idx].max():
                continue
            return fn(scored.take(idx)), attempt
        return None, MAX_REDRAWS

    results = _map(one, range(b), workers)
    values = np.array([v for v, _ in results if v is not None])
    redraws = sum(r for _, r in results)
    if values.size < 0.9 * b:
        raise NumericError(f"only {values.size} of {b} bootstrap resamples were usable")
    lo, hi = np.percentile(values, [2.5, 97.5])
    return BootstrapResult(statistic, float(estimate), float(lo), float(hi), b, int(values.size), redraws, seed,
                           threshold if statistic == "thresholded_auc" else None)


@dataclass(frozen=True)
class ImportanceRow:
    feature: str
    mean_drop: float
    sd_drop: float
    repeats: int
    seed: int
    drops: tuple = ()


def permutation_importance(model, cohort, threshold=0.5, repeats=30, seed=0, workers=1):
    """Drop in thresholded ROC-AUC after shuffling each raw input column.

    The shuffled raw column passes through the model's stored
    standardizer, exactly as new data would. ``model`` needs ``features``
    and ``predict_raw``.
    """
    seed = check_seed(seed)
    if repeats < 1:
        raise ValueError("repeats must be at least 1")
    y = cohort.labels()
    if y.min() == y.max():
        raise DataError("single-class cohort")
    x = cohort.matrix(model.features)
    base = thresholded_auc(ScoredSet(model.predict_raw(x), y), threshold)

    def one(task):
        j, r = task
        rng = derived_rng(seed, j, r)
        xp = x.copy()
        xp[:, j] = rng.permutation(xp[:, j])
        return base - thresholded_auc(ScoredSet(model.predict_raw(xp), y), threshold)

    tasks = [(j, r) for j in range(len(model.features)) for r in range(repeats)]
    drops = np.array(_map(one, tasks, workers)).reshape(len(model.features), repeats)
    rows = []
    for j, f in enumerate(model.features):
        d = drops[j]
        sd = float(d.std(ddof=1)) if repeats > 1 else 0.0
        rows.append(ImportanceRow(f, float(d.mean()), sd, repeats, seed, tuple(float(v) for v in d)))
    return rows


def stratified_kfold(labels, k=10, seed=0):
    """``k`` disjoint validation index arrays covering ``range(n)``.

    Each class is shuffled and dealt round-robin, continuing where the
    previous class stopped, so per-class and total fold sizes differ by at
    most one.
    """
    labels = np.asarray(labels)
    if k < 2:
        raise ValueError("k must be at least 2")
    rng = np.random.default_rng(check_seed(seed))
    assign = np.empty(labels.size, dtype=np.int64)
    offset = 0
    for c in (0, 1):
        idx = np.flatnonzero(labels == c)
        if idx.size < k:
            raise DataError(f"class smaller than k: class {c} has {idx.size} members, k={k}")
        idx = rng.permutation(idx)
        assign[idx] = (offset + np.arange(idx.size)) % k
        offset = (offset + idx.size) % k
    if labels.size != np.sum((labels == 0) | (labels == 1)):
        raise DataError("labels must be 0 or 1")
    return [np.flatnonzero(assign == f) for f in range(k)]


@dataclass(frozen=True)
class AblationRow:
    removed: Optional[str]
    mean_auc: float
    fold_aucs: tuple
    k: int
    seed: int


def loo_ablation(cohort, config, k=10, seed=0, hidden_widths=DEFAULT_WIDTHS, threshold=0.5,
                 features=FEATURES, workers=1):
    """Leave-one-feature-out ablation under stratified k-fold cross-validation.

    The first row is the full feature set (``removed=None``); each fold
    refits the standardizer on its training folds only.
    """
    folds = stratified_kfold(cohort.labels(), k, seed)
    n = len(cohort)

    def run(task):
        removed, f = task
        feats = tuple(x for x in features if x != removed)
        held = folds[f]
        mask = np.ones(n, dtype=bool)
        mask[held] = False
        model = train(cohort.subset(np.flatnonzero(mask)), config, hidden_widths, feats)
        return thresholded_auc(predict(model, cohort.subset(held)), threshold)

    removals = (None, *features)
    aucs = _map(run, [(r, f) for r in removals for f in range(k)], workers)
    rows = []
    for i, removed in enumerate(removals):
        per_fold = tuple(float(a) for a in aucs[i * k:(i + 1) * k])
        rows.append(AblationRow(removed, float(np.mean(per_fold)), per_fold, k, seed))
    return rows


@dataclass(frozen=True)
class AuditResult:
    criterion: str
    threshold: float
    value: float
    sweep: tuple  # (threshold, sensitivity, specificity, youden, f1)


def audit_grid(step):
    if not 0 < step < 1:
        raise ValueError("grid step must lie in (0, 1)")
    count = math.ceil(1.0 / step - 1e-9) - 1
    return np.round(step * np.arange(1, count + 1), 12)


def threshold_audit(scored, criterion="youden", step=0.01):
    """Sweep thresholds in (0, 1) and return the best one for ``criterion``.

    Ties go to the smallest threshold.
    """
    if criterion not in ("youden", "f1"):
        raise ValueError("criterion must be 'youden' or 'f1'")
    y = scored.require_labels()
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DataError("threshold audit needs both classes")
    sweep = []
    for t in audit_grid(step):
        pred = scored.scores > t
        tp = int(np.sum(pred & (y == 1)))
        fp = int(np.sum(pred & (y == 0)))
        sens = tp / n_pos
        spec = (n_neg - fp) / n_neg
        denom = 2 * tp + fp + (n_pos - tp)
        f1 = 2 * tp / denom if denom else 0.0
        sweep.append((float(t), sens, spec, sens + spec - 1.0, f1))
    col = 3 if criterion == "youden" else 4
    best = max(range(len(sweep)), key=lambda i: (sweep[i][col], -i))
    return AuditResult(criterion, sweep[best][0], sweep[best][col], tuple(sweep))


def import_predictions(source, cohort, name="external"):
    """Read ``prob[,label][,id]`` CSV predictions for ``cohort``.

    With an ``id`` column rows are matched to cohort ids (and reordered);
    without one they must line up with the cohort row for row. A supplied
    label must agree with the cohort's label.
    """
    if isinstance(source, str):
        source = io.StringIO(source)
    rows = list(csv.reader(source.read().splitlines()))
    if not rows:
        raise DataError("empty prediction file")
    header = [h.strip().lower() for h in rows[0]]
    unknown = set(header) - {"prob", "label", "id"}
    if "prob" not in header or unknown:
        raise DataError(f"prediction header must be prob[,label][,id], got {rows[0]}")
    pos = {h: i for i, h in enumerate(header)}
    body = rows[1:]
    if len(body) != len(cohort):
        raise DataError(f"{len(body)} predictions for a cohort of {len(cohort)} records")
    probs = np.empty(len(body))
    file_labels = [None] * len(body)
    order = list(range(len(body)))
    if "id" in pos:
        ids = cohort.ids()
        where = {cid: i for i, cid in enumerate(ids)}
        if len(where) != len(ids):
            raise DataError("cohort ids are not unique")
        seen = set()
        for r, cells in enumerate(body, start=1):
            pid = cells[pos["id"]].strip()
            if pid not in where or pid in seen:
                raise DataError(f"row {r}: id {pid!r} does not match the cohort one-to-one")
            seen.add(pid)
            order[r - 1] = where[pid]
    for r, cells in enumerate(body, start=1):
        if len(cells) != len(header):
            raise DataError(f"row {r} has {len(cells)} fields, expected {len(header)}")
        try:
            p = float(cells[pos["prob"]])
        except ValueError:
            raise DataError(f"row {r}: unparsable probability {cells[pos['prob']]!r}") from None
        if not (math.isfinite(p) and 0.0 <= p <= 1.0):
            raise DataError(f"row {r}: probability {p} outside [0, 1]")
        probs[order[r - 1]] = p
        if "label" in pos and cells[pos["label"]].strip() != "":
            lab = cells[pos["label"]].strip()
            if lab not in ("0", "1"):
                raise DataError(f"row {r}: label must be 0 or 1")
            file_labels[order[r - 1]] = int(lab)
    cohort_labels = [rec.label for rec in cohort]
    labels = []
    for i, (fl, cl) in enumerate(zip(file_labels, cohort_labels)):
        if fl is not None and cl is not None and fl != cl:
            raise DataError(f"record {i + 1}: prediction label {fl} disagrees with cohort label {cl}")
        labels.append(cl if cl is not None else fl)
    labels = np.array(labels) if all(l is not None for l in labels) else None
    return ScoredSet(probs, labels, name, ids=tuple(cohort.ids()))
