import numpy as np
import pytest
from scipy import sparse
from scipy.optimize import linprog

_ACCEPTANCE = {}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def acceptance():
    """Record the outcome of an acceptance criterion for the terminal summary."""

    def record(number, passed, detail=""):
        _ACCEPTANCE[number] = (bool(passed), detail)
        status = "PASS" if passed else "FAIL"
        print(f"criterion {number}: {status} {detail}")
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        passed, detail = _ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")


def lp_objective(C, bounds):
    """Independent LP value of min <C, S> over the relaxed polytope (HiGHS)."""
    n = bounds.n
    R = sparse.kron(sparse.identity(n), np.ones((1, n)))
    Cs = sparse.kron(np.ones((1, n)), sparse.identity(n))
    A = sparse.vstack([R, -R, Cs, -Cs])
    b = np.concatenate([np.full(n, bounds.K_x), np.full(n, -bounds.k_x),
                        np.full(n, bounds.K_y), np.full(n, -bounds.k_y)])
    res = linprog(C.ravel(), A_ub=A, b_ub=b, A_eq=np.ones((1, n * n)), b_eq=[bounds.mass],
                  bounds=(0, 1), method="highs")
    assert res.status == 0
    return res.fun


def dense_gradient(G):
    """Dense matrix of a gradient operator built edge by edge."""
    P, N = G.shape
    D = np.zeros((P, N))
    for e, ((i, j), w) in enumerate(zip(G.graph.edges, G.graph.weights)):
        D[e, i] += w
        D[e, j] -= w
    return D
