"""Univariable association statistics.

Welch's t, Mann-Whitney U, Spearman and point-biserial correlations, and a
Newton-Raphson univariable logistic regression used both for standardized
odds ratios and for the FIB-4 risk calibration.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass
from functools import lru_cache
from typing import NamedTuple, Optional

import numpy as np
from scipy.special import betainc

from .cohort import FEATURES
from .errors import ConvergenceError, DataError
from .metrics import midranks

#: Combined sample size up to which tie-free Mann-Whitney p-values are exact.
MW_EXACT_MAX_N = 12
#: |coefficient| beyond which a logistic fit is declared separated.
SEPARATION_BOUND = 15.0
MAX_HALVINGS = 30
Z_95 = 1.96


def t_cdf(t, df):
    """Student t CDF through the regularized incomplete beta function."""
    if df <= 0:
        raise ValueError("degrees of freedom must be positive")
    tail = 0.5 * float(betainc(df / 2.0, 0.5, df / (df + t * t)))
    return tail if t < 0 else 1.0 - tail


def t_two_sided_p(t, df):
    return float(betainc(df / 2.0, 0.5, df / (df + t * t)))


class WelchResult(NamedTuple):
    t: float
    df: float
    p: float


def welch_t(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size < 2 or b.size < 2:
        raise DataError("Welch's test needs at least two values per group")
    va, vb = a.var(ddof=1), b.var(ddof=1)
    if va == 0 or vb == 0:
        raise DataError("Welch's test needs nonzero variance in both groups")
    qa, qb = va / a.size, vb / b.size
    t = (a.mean() - b.mean()) / math.sqrt(qa + qb)
    df = (qa + qb) ** 2 / (qa**2 / (a.size - 1) + qb**2 / (b.size - 1))
    return WelchResult(float(t), float(df), t_two_sided_p(t, df))


class MannWhitneyResult(NamedTuple):
    u: float
    p: float
    method: str


@lru_cache(maxsize=None)
def _u_counts(m, n):
    """Number of arrangements giving each U = 0..m*n for group sizes m, n."""
    if m == 0 or n == 0:
        return (1,)
    # U(m, n) = U(m-1, n) shifted by n  +  U(m, n-1)
    with_last_in_a = _u_counts(m - 1, n)
    with_last_in_b = _u_counts(m, n - 1)
    out = [0] * (m * n + 1)
    for u, c in enumerate(with_last_in_a):
        out[u + n] += c
    for u, c in enumerate(with_last_in_b):
        out[u] += c
    return tuple(out)


def mann_whitney_exact_p(u, m, n):
    counts = _u_counts(m, n)
    total = sum(counts)
    k = int(round(u))
    lower = sum(counts[: k + 1]) / total
    upper = sum(counts[k:]) / total
    return min(1.0, 2.0 * min(lower, upper))


def mann_whitney(a, b):
    """U statistic of ``a`` (midranks for ties) and its two-sided p-value.

    Exact null distribution for tie-free samples with ``len(a) + len(b) <=
    12``; otherwise the normal approximation with tie and continuity
    corrections.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    m, n = a.size, b.size
    if m == 0 or n == 0:
        raise DataError("Mann-Whitney test needs two non-empty groups")
    pooled = np.r_[a, b]
    r = midranks(pooled)
    u = float(r[:m].sum() - m * (m + 1) / 2.0)
    _, tie_sizes = np.unique(pooled, return_counts=True)
    has_ties = bool(np.any(tie_sizes > 1))
    if m + n <= MW_EXACT_MAX_N and not has_ties:
        return MannWhitneyResult(u, mann_whitney_exact_p(u, m, n), "exact")
    big_n = m + n
    tie_term = float(np.sum(tie_sizes**3 - tie_sizes)) / (big_n * (big_n - 1))
    var = m * n / 12.0 * ((big_n + 1) - tie_term)
    if var <= 0:
        return MannWhitneyResult(u, 1.0, "normal")
    z = max(abs(u - m * n / 2.0) - 0.5, 0.0) / math.sqrt(var)
    return MannWhitneyResult(u, min(1.0, math.erfc(z / math.sqrt(2.0))), "normal")


def _pearson(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.size != y.size:
        raise DataError("vectors differ in length")
    if x.size < 2:
        raise DataError("correlation needs at least two observations")
    xc = x - x.mean()
    yc = y - y.mean()
    sxx, syy = float(xc @ xc), float(yc @ yc)
    if sxx == 0 or syy == 0:
        raise DataError("correlation undefined for a constant vector")
    r = float(xc @ yc) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


def spearman(x, y):
    return _pearson(midranks(x), midranks(y))


def point_biserial(x, labels):
    labels = np.asarray(labels)
    if not np.all((labels == 0) | (labels == 1)):
        raise DataError("labels must be 0 or 1")
    if labels.min() == labels.max():
        raise DataError("point-biserial correlation needs both classes")
    return _pearson(x, labels)


@dataclass(frozen=True)
class LogisticFit:
    intercept: float
    slope: float
    slope_se: float
    converged: bool
    iterations: int
    diagnostic: str = ""
    intercept_se: Optional[float] = None


def _expit(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def fit_univariable_logistic(x, labels, max_iter=100, tol=1e-10):
    """Maximum-likelihood ``logit P(y=1) = b0 + b1 x`` by step-halving Newton-Raphson.

    Standard errors come from the inverse observed information at the
    solution. A coefficient beyond +/-15 marks (quasi-)separation and the fit
    is returned with ``converged=False``.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if x.size != y.size:
        raise DataError("x and labels differ in length")
    if not np.all((y == 0) | (y == 1)):
        raise DataError("labels must be 0 or 1")
    if y.min() == y.max():
        raise DataError("logistic regression needs both classes")
    if x.min() == x.max():
        raise DataError("logistic regression needs a non-constant predictor")
    design = np.column_stack([np.ones_like(x), x])
    ybar = y.mean()
    beta = np.array([math.log(ybar / (1 - ybar)), 0.0])

    def loglik(b):
        eta = design @ b
        return float(np.sum(y * eta - np.logaddexp(0.0, eta)))

    current = loglik(beta)
    converged = False
    diagnostic = ""
    it = 0
    for it in range(1, max_iter + 1):
        p = _expit(design @ beta)
        info = design.T @ (design * (p * (1 - p))[:, None])
        try:
            step = np.linalg.solve(info, design.T @ (y - p))
        except np.linalg.LinAlgError:
            diagnostic = "singular information matrix (separation)"
            break
        full_step = np.max(np.abs(step))
        # halve the step while it clearly lowers the likelihood; roundoff-sized drops are ignored
        slack = 1e-10 * (1.0 + abs(current))
        for _ in range(MAX_HALVINGS):
            if loglik(beta + step) >= current - slack:
                break
            step = step / 2.0
        beta = beta + step
        current = loglik(beta)
        if np.max(np.abs(beta)) > SEPARATION_BOUND:
            diagnostic = f"|coefficient| exceeded {SEPARATION_BOUND} at iteration {it} (separation)"
            break
        if full_step < tol:
            converged = True
            break
    else:
        diagnostic = f"no convergence within {max_iter} iterations"
    p = _expit(design @ beta)
    info = design.T @ (design * (p * (1 - p))[:, None])
    try:
        cov = np.linalg.inv(info)
        se1, se0 = math.sqrt(cov[1, 1]), math.sqrt(cov[0, 0])
    except (np.linalg.LinAlgError, ValueError):
        se1 = se0 = float("nan")
    return LogisticFit(float(beta[0]), float(beta[1]), se1, converged, it, diagnostic, se0)


class OddsRatio(NamedTuple):
    odds_ratio: float
    ci_lo: float
    ci_hi: float


def standardized_or(x, labels):
    """Odds ratio per one (population) standard deviation, with a Wald 95% CI."""
    x = np.asarray(x, dtype=np.float64)
    sd = x.std()
    if sd == 0:
        raise DataError("standardized odds ratio needs a non-constant predictor")
    fit = fit_univariable_logistic((x - x.mean()) / sd, labels)
    if not fit.converged:
        raise ConvergenceError(f"logistic fit failed: {fit.diagnostic}")
    b, se = fit.slope, fit.slope_se
    return OddsRatio(math.exp(b), math.exp(b - Z_95 * se), math.exp(b + Z_95 * se))


@dataclass(frozen=True)
class AssociationRow:
    feature: str
    early_mean: float
    early_sd: float
    advanced_mean: float
    advanced_sd: float
    welch_t: float
    welch_df: float
    welch_p: float
    mw_u: float
    mw_p: float
    spearman_rho: float
    point_biserial_r: float
    std_or: float
    or_ci_lo: float
    or_ci_hi: float


ASSOCIATION_COLUMNS = tuple(AssociationRow.__dataclass_fields__)


def univariable_table(cohort, features=FEATURES):
    labels = cohort.labels()
    if labels.min() == labels.max():
        raise DataError("single-class cohort")
    rows = []
    for f in features:
        x = cohort.matrix((f,))[:, 0]
        early, adv = x[labels == 0], x[labels == 1]
        w = welch_t(early, adv)
        mw = mann_whitney(adv, early)
        orr = standardized_or(x, labels)
        rows.append(AssociationRow(
            f, float(early.mean()), float(early.std(ddof=1)), float(adv.mean()), float(adv.std(ddof=1)),
            w.t, w.df, w.p, mw.u, mw.p, spearman(x, labels), point_biserial(x, labels), *orr))
    return rows


def write_association_csv(rows, fh):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(ASSOCIATION_COLUMNS)
    for r in rows:
        w.writerow([v if isinstance(v, str) else repr(float(v)) for v in asdict(r).values()])
