import numpy as np
import pytest

from diagpolicy.data import AttributeMeta, Dataset, random_problem
from diagpolicy.mdp import CostModel, ProbEstimator


def make_ds(X, y, arities=None, costs=None, n_classes=2):
    X = np.asarray(X)
    arities = arities or [int(X[:, n].max()) + 1 for n in range(X.shape[1])]
    costs = costs or [1.0] * len(arities)
    attrs = [AttributeMeta(f"x{n}", a, float(c)) for n, (a, c) in enumerate(zip(arities, costs))]
    return Dataset(X, y, attrs, n_classes)


def oracle_instances(n=60):
    """Seeded small problems: up to 3 tests, arity up to 3, at most 200 rows."""
    out = []
    for seed in range(n):
        ds, cost = random_problem(seed)
        out.append((seed, ds, cost))
    return out


@pytest.fixture
def perfect_test():
    # x0 reveals the class exactly; x1 is noise
    X = [[0, 0], [0, 1], [1, 0], [1, 1]] * 5
    y = [0, 0, 1, 1] * 5
    ds = make_ds(X, y)
    cost = CostModel([1.0, 1.0], [[0, 100], [100, 0]])
    return ds, cost, ProbEstimator.from_dataset(ds)


def pytest_terminal_summary(terminalreporter):
    import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance")
        for line in test_acceptance.RESULTS:
            terminalreporter.write_line(line)
