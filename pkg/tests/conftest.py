import numpy as np
import pytest


def regression_instance(seed):
    """Random linear-regression problem with n in [20, 200], p in [1, 5]."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(20, 201))
    p = int(rng.integers(1, 6))
    X = rng.normal(size=(n, p))
    if p > 1:
        X[:, 0] = 1.0
    beta = rng.normal(scale=2.0, size=p)
    # heteroskedastic noise so HC0 differs from the classical covariance
    noise = rng.normal(size=n) * (0.5 + np.abs(X[:, -1]))
    return X, X @ beta + noise


def normal_equations(X, y):
    return np.linalg.solve(X.T @ X, X.T @ y)


def hc0_covariance(X, y):
    """White's HC0 covariance written out from the residuals."""
    beta = normal_equations(X, y)
    resid = y - X @ beta
    xtx_inv = np.linalg.inv(X.T @ X)
    meat = np.zeros((X.shape[1], X.shape[1]))
    for xi, ei in zip(X, resid):
        meat += ei ** 2 * np.outer(xi, xi)
    return xtx_inv @ meat @ xtx_inv


@pytest.fixture
def ryegrass():
    from mestim.dataset import load_ryegrass
    return load_ryegrass()


ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line per acceptance criterion."""
    def record(number, title, ok, detail=""):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {title}"
        if detail:
            line += f" -- {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2][:-1])):
            terminalreporter.write_line(line)
