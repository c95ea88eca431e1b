import numpy as np
import pytest

from mlenit.cohort import Cohort, PatientRecord, generate_synthetic_cohort, plant_signal, development_spec
from mlenit.metrics import ScoredSet


def random_scored_set(rng, n=None, ties=True):
    """Random labeled set with both classes; coarse scores force ties."""
    n = n or int(rng.integers(2, 60))
    labels = rng.integers(0, 2, n)
    labels[0], labels[1] = 0, 1
    scores = rng.integers(0, 11, n) / 10 if ties else rng.random(n)
    return ScoredSet(scores, labels)


def make_cohort(rows, name="toy"):
    """Cohort from ``(age, ast, alt, plt, label)`` tuples."""
    return Cohort(name, [PatientRecord.from_values(*r) for r in rows])


@pytest.fixture
def rng():
    return np.random.default_rng(20261016)


@pytest.fixture(scope="session")
def ast_cohort():
    """Development-statistics cohort with a strong equal-variance AST shift."""
    spec = plant_signal(development_spec(n=600, seed=11), "ast", 3.0)
    return generate_synthetic_cohort(spec, "ast-planted")


@pytest.fixture(scope="session")
def separable_cohort():
    """n=200 cohort whose label is fixed by AST with a clear margin."""
    rng = np.random.default_rng(5)
    rows = []
    for i in range(200):
        label = i % 2
        ast = rng.uniform(60, 90) if label else rng.uniform(15, 40)
        rows.append((rng.uniform(30, 70), ast, rng.uniform(20, 60), rng.uniform(150, 300), label))
    return make_cohort(rows, "separable")


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
