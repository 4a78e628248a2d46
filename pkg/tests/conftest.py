import numpy as np
import pytest

from uplift_boost.dataset import Feature, Group, SyntheticSpec, UpliftDataset, UpliftRule


def make_dataset(X_t, y_t, X_c, y_c, names=None):
    X_t = np.asarray(X_t, dtype=float).reshape(len(y_t), -1)
    X_c = np.asarray(X_c, dtype=float).reshape(len(y_c), -1)
    names = names or [f"x{j + 1}" for j in range(X_t.shape[1])]
    return UpliftDataset(tuple(Feature(n) for n in names), Group(X_t, y_t), Group(X_c, y_c))


@pytest.fixture
def four():
    """Treatment succeeds only at x=1, control only at x=0."""
    return make_dataset([[0.0], [1.0]], [0, 1], [[0.0], [1.0]], [1, 0])


def step_spec(n=2000, seed=0, p0=0.3, n_features=4):
    return SyntheticSpec(n, n, n_features, p0, (UpliftRule(0, 0.0, 0.4, -0.2),), seed=seed)


def null_spec(n=400, seed=0, p0=0.5, n_features=4):
    return SyntheticSpec(n, n, n_features, p0, (), seed=seed)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
