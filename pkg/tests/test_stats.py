import io
import itertools
import math

import mpmath
import numpy as np
import pytest
import scipy.stats
from hypothesis import given, settings
from hypothesis import strategies as st

from mlenit.cohort import generate_synthetic_cohort, development_spec
from mlenit.errors import ConvergenceError, DataError
from mlenit.metrics import ScoredSet, probability_auc
from mlenit.stats import (ASSOCIATION_COLUMNS, fit_univariable_logistic, mann_whitney, mann_whitney_exact_p,
                          point_biserial, spearman, standardized_or, t_cdf, univariable_table, welch_t,
                          write_association_csv)

from conftest import make_cohort
from oracles import mann_whitney_enumeration_p, welch_reference

vectors = st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=2, max_size=30)


def test_welch_examples():
    r = welch_t([1, 2, 3], [4, 5, 6])
    assert r.t == pytest.approx(-3.674, abs=1e-3)
    assert r.df == pytest.approx(4.0)
    assert r.p == pytest.approx(0.0213, abs=5e-4)
    same = welch_t([1, 2, 4], [1, 2, 4])
    assert same.t == 0 and same.p == 1
    with pytest.raises(DataError):
        welch_t([1], [1, 2])
    with pytest.raises(DataError):
        welch_t([1, 1], [1, 2])


@settings(max_examples=200, deadline=None)
@given(vectors, vectors)
def test_welch_against_references(a, b):
    if np.var(a) < 1e-6 or np.var(b) < 1e-6:
        return
    r = welch_t(a, b)
    t, df = welch_reference(a, b)
    assert r.t == pytest.approx(t, rel=1e-9, abs=1e-12) and r.df == pytest.approx(df, rel=1e-9)
    ref = scipy.stats.ttest_ind(a, b, equal_var=False)
    assert r.p == pytest.approx(ref.pvalue, rel=1e-8, abs=1e-14)
    swapped = welch_t(b, a)
    assert swapped.t == -r.t and swapped.p == r.p


def test_t_cdf_high_precision():
    mpmath.mp.dps = 40
    rng = np.random.default_rng(3)
    for _ in range(20):
        t = float(rng.uniform(-8, 8))
        df = float(rng.choice([0.7, 1, 2.5, 4, 9.3, 30, 120]))
        x = mpmath.mpf(df) / (df + mpmath.mpf(t) ** 2)
        tail = mpmath.betainc(df / 2, 0.5, 0, x, regularized=True) / 2
        ref = tail if t < 0 else 1 - tail
        assert abs(t_cdf(t, df) - float(ref)) < 1e-9


def test_mann_whitney_examples():
    r = mann_whitney([1, 2], [3, 4])
    assert r.u == 0 and r.p == pytest.approx(1 / 3) and r.method == "exact"
    assert mann_whitney([1, 2, 3], [1, 2, 3]).u == 4.5
    assert mann_whitney([1, 2, 3], [1e9, 2e9]).u == 0
    assert mann_whitney([1e9, 2e9, 3e9], [1, 2]).u == 6
    with pytest.raises(DataError):
        mann_whitney([], [1])


def test_mann_whitney_exact_matches_enumeration():
    values = list(range(1, 11))
    for total in range(2, 11):
        for m in range(1, total):
            for a_idx in itertools.combinations(range(total), m):
                a = [values[i] for i in a_idx]
                b = [values[i] for i in range(total) if i not in a_idx]
                r = mann_whitney(a, b)
                u, p = mann_whitney_enumeration_p(a, b)
                assert r.method == "exact" and r.u == u and r.p == pytest.approx(p, abs=1e-15)


def test_mann_whitney_normal_approximation_against_scipy():
    rng = np.random.default_rng(6)
    for _ in range(50):
        a = rng.integers(0, 8, int(rng.integers(3, 25)))
        b = rng.integers(0, 8, int(rng.integers(3, 25)))
        if np.unique(np.r_[a, b]).size < 2:
            continue
        r = mann_whitney(a, b)
        ref = scipy.stats.mannwhitneyu(a, b, alternative="two-sided", method="asymptotic", use_continuity=True)
        assert r.u == ref.statistic and r.p == pytest.approx(ref.pvalue, rel=1e-9)


@settings(max_examples=200, deadline=None)
@given(vectors, vectors)
def test_u_complement(a, b):
    assert mann_whitney(a, b).u + mann_whitney(b, a).u == len(a) * len(b)


def test_exact_p_capped():
    assert mann_whitney_exact_p(2, 2, 2) == 1.0


@settings(max_examples=200, deadline=None)
@given(st.lists(st.sampled_from([0.0, 0.1, 0.25, 0.5, 0.9, 1.0]), min_size=2, max_size=40), st.integers(0, 2**32))
def test_auc_equals_normalized_u(scores, seed):
    y = np.random.default_rng(seed).integers(0, 2, len(scores))
    y[0], y[1] = 0, 1
    s = np.array(scores)
    u = mann_whitney(s[y == 1], s[y == 0]).u
    assert abs(probability_auc(ScoredSet(s, y)) - u / (y.sum() * (y.size - y.sum()))) < 1e-12


def test_spearman_examples():
    x = np.array([1.0, 2, 3, 4, 5])
    assert spearman(x, x**3) == pytest.approx(1.0)
    assert spearman(x, -x) == pytest.approx(-1.0)
    assert spearman([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(0.8)
    with pytest.raises(DataError):
        spearman([1, 1, 1], [1, 2, 3])


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(-50, 50), min_size=2, max_size=30), st.integers(0, 2**32))
def test_spearman_properties(x, seed):
    y = np.random.default_rng(seed).normal(size=len(x))
    if np.unique(x).size < 2:
        return
    rho = spearman(x, y)
    assert -1 <= rho <= 1
    # cubing integers is exact and strictly increasing
    assert spearman(np.array(x, dtype=float) ** 3, y) == pytest.approx(rho, abs=1e-12)
    assert spearman(x, np.exp(y)) == pytest.approx(rho, abs=1e-12)
    assert rho == pytest.approx(scipy.stats.spearmanr(x, y).statistic, abs=1e-10)


def test_point_biserial_examples():
    assert point_biserial([1, 2, 3, 4], [0, 0, 1, 1]) == pytest.approx(0.894427191, abs=1e-9)
    assert point_biserial([1, 2, 2, 1], [0, 0, 1, 1]) == pytest.approx(0.0, abs=1e-15)
    assert point_biserial([-1, -2, -3, -4], [0, 0, 1, 1]) == pytest.approx(-0.894427191, abs=1e-9)
    with pytest.raises(DataError):
        point_biserial([1, 2], [1, 1])


def _two_by_two(a, b, c, d):
    """x=1: a positives, b negatives; x=0: c positives, d negatives."""
    x = [1] * (a + b) + [0] * (c + d)
    y = [1] * a + [0] * b + [1] * c + [0] * d
    return np.array(x, dtype=float), np.array(y)


def test_logistic_two_by_two():
    fit = fit_univariable_logistic(*_two_by_two(20, 5, 10, 10))
    assert fit.converged
    assert abs(fit.slope - math.log(4)) < 1e-8
    assert abs(fit.intercept - 0.0) < 1e-8
    # Woolf standard error of a log odds ratio
    assert fit.slope_se == pytest.approx(math.sqrt(1 / 20 + 1 / 5 + 1 / 10 + 1 / 10), rel=1e-8)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 60), st.integers(1, 60), st.integers(1, 60), st.integers(1, 60))
def test_logistic_two_by_two_closed_form(a, b, c, d):
    fit = fit_univariable_logistic(*_two_by_two(a, b, c, d))
    assert fit.converged
    assert abs(fit.slope - math.log(a * d / (b * c))) < 1e-8


def test_logistic_symmetric_and_separated():
    x = np.array([-2.0, -1, 1, 2, -2, -1, 1, 2])
    y = np.array([0, 1, 0, 1, 1, 0, 1, 1])
    y = np.r_[y, 1 - y]
    x = np.r_[x, -x]
    assert abs(fit_univariable_logistic(x, y).intercept) < 1e-10
    sep = fit_univariable_logistic([1.0, 2, 3, 4], [0, 0, 1, 1])
    assert not sep.converged and "separation" in sep.diagnostic


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32))
def test_logistic_score_equations_and_statsmodels(seed):
    sm = pytest.importorskip("statsmodels.api")
    rng = np.random.default_rng(seed)
    n = int(rng.integers(30, 300))
    x = rng.normal(0, 2, n)
    y = (rng.random(n) < 1 / (1 + np.exp(-(0.3 + 0.8 * x)))).astype(int)
    if y.min() == y.max():
        return
    fit = fit_univariable_logistic(x, y)
    if not fit.converged:
        return
    p = 1 / (1 + np.exp(-(fit.intercept + fit.slope * x)))
    assert abs(np.mean(y - p)) < 1e-8 and abs(np.mean(x * (y - p))) < 1e-8
    ref = sm.Logit(y, sm.add_constant(x)).fit(disp=0, tol=1e-12)
    assert fit.slope == pytest.approx(ref.params[1], rel=1e-6)
    assert fit.slope_se == pytest.approx(ref.bse[1], rel=1e-6)


def test_logistic_input_errors():
    with pytest.raises(DataError):
        fit_univariable_logistic([1, 2], [1, 1])
    with pytest.raises(DataError):
        fit_univariable_logistic([1, 1], [0, 1])


def test_standardized_or_scale_invariance():
    rng = np.random.default_rng(12)
    x = rng.normal(5, 3, 300)
    y = (rng.random(300) < 1 / (1 + np.exp(-(x - 5) / 3))).astype(int)
    base = standardized_or(x, y)
    assert base.ci_lo <= base.odds_ratio <= base.ci_hi
    for k, shift in ((1e-3, 0), (7.5, 2), (1e4, -50)):
        other = standardized_or(k * x + shift, y)
        for u, v in zip(base, other):
            assert abs(u - v) <= 1e-9 * abs(u)


def test_standardized_or_null_and_separated():
    x = np.array([1.0, 2, 3, 4, 1, 2, 3, 4])
    r = standardized_or(x, [0, 1, 0, 1, 1, 0, 1, 0])
    assert r.ci_lo <= 1 <= r.ci_hi
    with pytest.raises(ConvergenceError):
        standardized_or([1.0, 2, 3, 4], [0, 0, 1, 1])


def test_univariable_table_directions():
    spec = development_spec(n=2000, seed=4)
    c = generate_synthetic_cohort(spec)
    rows = {r.feature: r for r in univariable_table(c)}
    assert list(rows) == ["age", "fib4", "ast", "plt", "alt"]
    assert rows["ast"].spearman_rho > 0 and rows["ast"].std_or > 1
    assert rows["plt"].spearman_rho < 0 and rows["plt"].std_or < 1
    for r in rows.values():
        assert 0 <= r.welch_p <= 1 and 0 <= r.mw_p <= 1
        assert 0 < r.or_ci_lo <= r.std_or <= r.or_ci_hi


def test_univariable_table_null_feature():
    rows = []
    for i in range(40):
        label = i % 2
        # age repeats the same values in both classes
        rows.append((30 + (i // 2) % 10, 40 + 3 * label + i % 7, 25 + i % 7, 200 + i % 11, label))
    c = make_cohort(rows)
    age = univariable_table(c)[0]
    assert age.welch_p == pytest.approx(1.0) and age.or_ci_lo <= 1 <= age.or_ci_hi


def test_association_csv():
    c = generate_synthetic_cohort(development_spec(n=200, seed=1))
    buf = io.StringIO()
    write_association_csv(univariable_table(c), buf)
    lines = buf.getvalue().splitlines()
    assert lines[0].split(",") == list(ASSOCIATION_COLUMNS)
    assert len(lines) == 6
