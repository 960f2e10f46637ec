import numpy as np
import pytest

from ctdsat.formula import make_formula


@pytest.fixture(scope="session")
def example3():
    """Three-variable, four-clause formula with solutions
    {(1,0,1), (0,0,0), (0,0,1), (0,1,1)}."""
    return make_formula(3, [
        [(0, -1), (1, -1), (2, 1)],
        [(0, 1), (1, -1), (2, 1)],
        [(0, -1), (1, 1), (2, 1)],
        [(0, -1), (1, -1), (2, -1)],
    ])


@pytest.fixture(scope="session")
def example3_solutions():
    return [np.array(bits, dtype=bool)
            for bits in [(1, 0, 1), (0, 0, 0), (0, 0, 1), (0, 1, 1)]]


@pytest.fixture(scope="session")
def unsat3():
    """Every sign pattern over three variables: all orthants blocked."""
    clauses = []
    for a in (1, -1):
        for b in (1, -1):
            for c in (1, -1):
                clauses.append([(0, a), (1, b), (2, c)])
    return make_formula(3, clauses)


def brute_force_solutions(f):
    """Independent oracle: evaluate every assignment clause by clause."""
    sols = []
    for code in range(2 ** f.n):
        bits = [(code >> (f.n - 1 - i)) & 1 == 1 for i in range(f.n)]
        ok = True
        for clause in f.clauses:
            if not any((bits[v] and s > 0) or (not bits[v] and s < 0)
                       for v, s in clause):
                ok = False
                break
        if ok:
            sols.append(np.array(bits, dtype=bool))
    return sols
