import numpy as np
import pytest

# acceptance verdicts, printed once at the end of the run
ACCEPTANCE_LINES = []


def record_acceptance(criterion, passed, detail):
    line = f"ACCEPTANCE {criterion}: {'PASS' if passed else 'FAIL'} | {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def b_of_theta_lstsq(pairs, p, seed=0):
    """Reference b(theta): the beta with W beta = Z theta on a random full-rank W."""
    g = np.random.default_rng(seed)
    W = g.standard_normal((3 * p + 5, p))
    f = np.zeros(W.shape[0])
    for (j, k), v in pairs.items():
        f += v * (W[:, j] - W[:, k])
    return np.linalg.lstsq(W, f, rcond=None)[0]


def abs_gaussian_logs(rng, n, p):
    return np.log(np.abs(rng.standard_normal((n, p))))
