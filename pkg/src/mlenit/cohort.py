"""Clinical data model for the FIB-4 variable space.

A record carries exactly the four FIB-4 inputs (age, AST, ALT, platelets),
the score derived from them and an optional biopsy label. Nothing else can
enter a cohort: unknown CSV columns are rejected.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Optional

import numpy as np

from ._util import check_seed, round_half_up
from .errors import DataError, DomainError

#: Model input order. Every feature matrix in the package uses it.
FEATURES = ("age", "fib4", "ast", "plt", "alt")
RAW_FIELDS = ("age", "ast", "alt", "plt")
FIB4_CUTOFF = 1.3


def _check_positive(name, value, row=None):
    where = f", row {row}" if row is not None else ""
    try:
        value = float(value)
    except (TypeError, ValueError):
        raise DomainError(f"unparsable number{where}, field {name}: {value!r}", name, row) from None
    if not math.isfinite(value):
        raise DomainError(f"non-finite value{where}, field {name}", name, row)
    if value <= 0:
        raise DomainError(f"non-positive value{where}, field {name}", name, row)
    return value


def compute_fib4(age, ast, alt, plt):
    """FIB-4 index, ``age * ast / (plt * sqrt(alt))``.

    Raises DomainError naming the first non-positive or non-finite input.
    """
    age = _check_positive("age", age)
    ast = _check_positive("ast", ast)
    alt = _check_positive("alt", alt)
    plt = _check_positive("plt", plt)
    return age * ast / (plt * math.sqrt(alt))


@dataclass(frozen=True)
class PatientRecord:
    age: float
    ast: float
    alt: float
    plt: float
    fib4: float
    label: Optional[int] = None
    id: Optional[str] = None

    def __post_init__(self):
        expected = compute_fib4(self.age, self.ast, self.alt, self.plt)
        if not math.isclose(self.fib4, expected, rel_tol=1e-9, abs_tol=0.0):
            raise DomainError(f"fib4 {self.fib4!r} inconsistent with inputs ({expected!r})", "fib4")
        if self.label is not None and self.label not in (0, 1):
            raise DomainError(f"label must be 0 or 1, got {self.label!r}", "label")

    @classmethod
    def from_values(cls, age, ast, alt, plt, label=None, id=None):
        return cls(float(age), float(ast), float(alt), float(plt),
                   compute_fib4(age, ast, alt, plt), label, id)

    def value(self, name):
        return getattr(self, name)


class FeatureMatrix(NamedTuple):
    values: np.ndarray
    labels: Optional[np.ndarray]
    features: tuple


@dataclass(frozen=True)
class Cohort:
    name: str
    records: tuple = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def is_labeled(self):
        return all(r.label is not None for r in self.records)

    def labels(self):
        if not self.is_labeled:
            raise DataError(f"cohort {self.name!r} has unlabeled records")
        return np.array([r.label for r in self.records], dtype=np.int64)

    def matrix(self, features=FEATURES):
        return np.array([[r.value(f) for f in features] for r in self.records], dtype=np.float64).reshape(
            len(self.records), len(features))

    def ids(self):
        return [r.id if r.id is not None else str(i + 1) for i, r in enumerate(self.records)]

    def subset(self, indices, name=None):
        return Cohort(name or self.name, [self.records[i] for i in indices])


def _parse_label(text, row):
    text = text.strip()
    if text == "":
        return None
    try:
        value = float(text)
    except ValueError:
        raise DomainError(f"unparsable number, row {row}, field label: {text!r}", "label", row) from None
    if value not in (0.0, 1.0):
        raise DomainError(f"label outside {{0,1}}, row {row}, field label", "label", row)
    return int(value)


def load_cohort(source, name="cohort", fib4_policy="recompute", rel_tol=0.01, require_labels=False):
    """Read a cohort from a CSV character stream (or a string of CSV text).

    Columns are ``age,ast,alt,plt`` plus optional ``fib4``, ``label`` and
    ``id``; header names match case-insensitively. With
    ``fib4_policy="verify"`` a supplied fib4 that differs from the
    recomputed value by more than ``rel_tol`` is an error; the stored value
    is always the recomputed one.
    """
    if fib4_policy not in ("recompute", "verify"):
        raise ValueError(f"unknown fib4 policy {fib4_policy!r}")
    if isinstance(source, str):
        source = io.StringIO(source)
    lines = source.read().splitlines()
    if not lines:
        raise DataError("empty input: header row required")
    header = [h.strip().lower() for h in next(csv.reader([lines[0]]))]
    allowed = set(RAW_FIELDS) | {"fib4", "label", "id"}
    for col in header:
        if col not in allowed:
            raise DataError(f"unexpected column {col!r}; only age, ast, alt, plt, fib4, label, id are accepted")
    if len(set(header)) != len(header):
        raise DataError("duplicate column in header")
    for col in RAW_FIELDS:
        if col not in header:
            raise DataError(f"missing required column {col!r}")
    if require_labels and "label" not in header:
        raise DataError("missing required column 'label'")
    pos = {col: i for i, col in enumerate(header)}

    records = []
    for row, line in enumerate(lines[1:], start=1):
        if line.strip() == "":
            raise DataError(f"blank line at row {row}")
        cells = next(csv.reader([line]))
        if len(cells) != len(header):
            raise DataError(f"row {row} has {len(cells)} fields, expected {len(header)}")
        raw = {f: _check_positive(f, cells[pos[f]].strip(), row) for f in RAW_FIELDS}
        fib4 = raw["age"] * raw["ast"] / (raw["plt"] * math.sqrt(raw["alt"]))
        if fib4_policy == "verify" and "fib4" in pos and cells[pos["fib4"]].strip() != "":
            given = _check_positive("fib4", cells[pos["fib4"]].strip(), row)
            if abs(given - fib4) > rel_tol * abs(fib4):
                raise DomainError(f"fib4 mismatch row {row}: file {given!r}, recomputed {fib4!r}", "fib4", row)
        label = _parse_label(cells[pos["label"]], row) if "label" in pos else None
        if require_labels and label is None:
            raise DataError(f"missing label, row {row}")
        rid = cells[pos["id"]].strip() if "id" in pos else None
        records.append(PatientRecord(raw["age"], raw["ast"], raw["alt"], raw["plt"], fib4, label, rid))
    return Cohort(name, records)


def read_cohort(path, name=None, **kwargs):
    with open(path, newline="", encoding="utf-8") as fh:
        return load_cohort(fh, name or str(path), **kwargs)


def write_cohort(cohort, fh, include_fib4=True):
    cols = ["age", "ast", "alt", "plt"] + (["fib4"] if include_fib4 else [])
    has_ids = any(r.id is not None for r in cohort)
    if cohort.is_labeled:
        cols.append("label")
    if has_ids:
        cols.append("id")
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(cols)
    for r in cohort:
        w.writerow([repr(getattr(r, c)) if c not in ("label", "id") else getattr(r, c) for c in cols])


# -- splitting ---------------------------------------------------------------

def _allocate(class_sizes, total):
    """Largest-remainder apportionment of ``total`` across classes."""
    n = sum(class_sizes)
    quotas = [total * s / n for s in class_sizes]
    alloc = [math.floor(q) for q in quotas]
    order = sorted(range(len(quotas)), key=lambda i: (-(quotas[i] - alloc[i]), i))
    for i in order[: total - sum(alloc)]:
        alloc[i] += 1
    return alloc


def split_indices(labels, train_fraction, seed, stratified=True):
    """Index partition behind :func:`split_cohort`, each half in source order."""
    labels = np.asarray(labels)
    n = len(labels)
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must lie strictly between 0 and 1")
    rng = np.random.default_rng(check_seed(seed))
    n_train = round_half_up(train_fraction * n)
    if stratified:
        classes = [np.flatnonzero(labels == c) for c in (0, 1)]
        if any(len(c) == 0 for c in classes):
            raise DataError("single-class cohort cannot be stratified")
        alloc = _allocate([len(c) for c in classes], n_train)
        for c, k in zip(classes, alloc):
            if k < 1 or len(c) - k < 1:
                raise DataError("stratified split would leave a split without one of the classes")
        train = np.concatenate([rng.permutation(c)[:k] for c, k in zip(classes, alloc)])
    else:
        train = rng.permutation(n)[:n_train]
    mask = np.zeros(n, dtype=bool)
    mask[train] = True
    return np.flatnonzero(mask), np.flatnonzero(~mask)


def split_cohort(cohort, train_fraction=0.9, seed=0, stratified=True):
    """Random train/tune partition; stratified by label unless told otherwise."""
    labels = cohort.labels()
    train, tune = split_indices(labels, train_fraction, seed, stratified)
    return cohort.subset(train, f"{cohort.name}:train"), cohort.subset(tune, f"{cohort.name}:tune")


# -- standardization -----------------------------------------------------------

@dataclass(frozen=True)
class StandardizationParams:
    means: tuple
    sds: tuple
    feature_order: tuple = FEATURES

    def __post_init__(self):
        if not (len(self.means) == len(self.sds) == len(self.feature_order)):
            raise ValueError("means, sds and feature_order must have equal length")
        for f, s in zip(self.feature_order, self.sds):
            if not (math.isfinite(s) and s > 0):
                raise ValueError(f"standard deviation for {f} must be positive and finite")

    def apply(self, x):
        return (np.asarray(x, dtype=np.float64) - np.array(self.means)) / np.array(self.sds)

    def invert(self, z):
        return np.asarray(z, dtype=np.float64) * np.array(self.sds) + np.array(self.means)


def fit_standardizer(cohort, features=FEATURES):
    """Per-feature mean and population standard deviation."""
    if len(cohort) == 0:
        raise DataError("cannot fit a standardizer on an empty cohort")
    x = cohort.matrix(features)
    means = x.mean(axis=0)
    sds = x.std(axis=0)
    for f, m, s in zip(features, means, sds):
        # relative test: a constant column can leave rounding-level spread
        if s <= 1e-12 * max(abs(m), 1.0):
            raise DataError(f"zero variance: {f}")
    return StandardizationParams(tuple(float(m) for m in means), tuple(float(s) for s in sds), tuple(features))


def apply_standardizer(params, cohort):
    labels = cohort.labels() if cohort.is_labeled else None
    return FeatureMatrix(params.apply(cohort.matrix(params.feature_order)), labels, params.feature_order)


# -- synthetic cohorts -----------------------------------------------------------

#: Per-class (mean, sd) of the development cohort's univariable summary.
DEVELOPMENT_CLASSES = {
    "early": {"age": (44.29, 13.51), "ast": (43.28, 24.75), "alt": (75.10, 49.55), "plt": (235.82, 61.51)},
    "advanced": {"age": (53.04, 11.28), "ast": (55.39, 26.25), "alt": (78.14, 47.90), "plt": (202.16, 57.67)},
}
DEVELOPMENT_PREVALENCE = 0.276


@dataclass(frozen=True)
class SyntheticSpec:
    n: int
    prevalence: float
    seed: int
    classes: dict

    def __post_init__(self):
        if not (isinstance(self.n, (int, np.integer)) and self.n > 0):
            raise DataError("n must be a positive integer")
        if not 0 < self.prevalence < 1:
            raise DataError("prevalence must lie strictly inside (0, 1)")
        check_seed(self.seed)
        for cls in ("early", "advanced"):
            if cls not in self.classes:
                raise DataError(f"missing class {cls!r}")
            for f in RAW_FIELDS:
                mean, sd = self.classes[cls][f]
                if not mean > 0:
                    raise DataError(f"{cls}.{f}: mean must be positive")
                if not sd >= 0:
                    raise DataError(f"{cls}.{f}: sd must be non-negative")

    @classmethod
    def from_dict(cls, doc):
        try:
            classes = {c: {f: (float(doc["classes"][c][f]["mean"]), float(doc["classes"][c][f]["sd"]))
                           for f in RAW_FIELDS} for c in ("early", "advanced")}
            return cls(int(doc["n"]), float(doc["prevalence"]), int(doc["seed"]), classes)
        except (KeyError, TypeError) as exc:
            raise DataError(f"malformed synthetic spec: missing {exc}") from None

    @classmethod
    def from_json(cls, text):
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise DataError(f"synthetic spec is not valid JSON: {exc}") from None
        return cls.from_dict(doc)

    def to_dict(self):
        return {
            "n": int(self.n), "prevalence": self.prevalence, "seed": int(self.seed),
            "classes": {c: {f: {"mean": m, "sd": s} for f, (m, s) in self.classes[c].items()}
                        for c in ("early", "advanced")},
        }


def development_spec(n=540, prevalence=DEVELOPMENT_PREVALENCE, seed=0):
    return SyntheticSpec(n, prevalence, seed, {c: dict(v) for c, v in DEVELOPMENT_CLASSES.items()})


def plant_signal(spec, feature, separation):
    """Make ``feature`` strongly informative.

    Both classes get the early-class sd and the advanced mean moves to
    ``separation`` sds above the early mean. Equal-variance normal classes
    give a posterior whose log-odds is linear in the feature.
    """
    if feature not in RAW_FIELDS:
        raise ValueError(f"cannot plant signal on {feature!r}")
    mean, sd = spec.classes["early"][feature]
    classes = {c: dict(v) for c, v in spec.classes.items()}
    classes["early"][feature] = (mean, sd)
    classes["advanced"][feature] = (mean + separation * sd, sd)
    return replace(spec, classes=classes)


def _positive_normal(rng, mean, sd, size, max_rounds=10_000):
    out = rng.normal(mean, sd, size) if sd > 0 else np.full(size, float(mean))
    bad = out <= 0
    rounds = 0
    while bad.any():
        rounds += 1
        if rounds > max_rounds:
            raise DataError(f"cannot draw positive values from N({mean}, {sd})")
        out[bad] = rng.normal(mean, sd, int(bad.sum()))
        bad = out <= 0
    return out


def generate_synthetic_cohort(spec, name="synthetic"):
    """Draw a labeled cohort with exactly ``round(prevalence * n)`` positives.

    Features are independent per class; fib4 is derived from each row.
    """
    n_pos = round_half_up(spec.prevalence * spec.n)
    if n_pos < 1 or n_pos >= spec.n:
        raise DataError(f"infeasible spec: n={spec.n}, prevalence={spec.prevalence} gives {n_pos} positives")
    rng = np.random.default_rng(check_seed(spec.seed))
    labels = rng.permutation(np.r_[np.ones(n_pos, dtype=int), np.zeros(spec.n - n_pos, dtype=int)])
    values = {f: np.empty(spec.n) for f in RAW_FIELDS}
    for cls, code in (("early", 0), ("advanced", 1)):
        idx = np.flatnonzero(labels == code)
        for f in RAW_FIELDS:
            mean, sd = spec.classes[cls][f]
            values[f][idx] = _positive_normal(rng, mean, sd, len(idx))
    records = [PatientRecord.from_values(values["age"][i], values["ast"][i], values["alt"][i],
                                         values["plt"][i], int(labels[i]))
               for i in range(spec.n)]
    return Cohort(name, records)
