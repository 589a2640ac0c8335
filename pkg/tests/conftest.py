import numpy as np
import pytest
import scipy.sparse as sp


def random_symmetric(n, density, seed):
    """Seeded random symmetric sparse matrix (as dense array) with a nonzero diagonal."""
    rng = np.random.default_rng(seed)
    a = sp.random(n, n, density=density / 2, random_state=rng, data_rvs=rng.standard_normal).toarray()
    a = a + a.T
    a[np.diag_indices(n)] += rng.standard_normal(n)
    return a


def random_spd(n, density, seed, margin=1.0):
    a = random_symmetric(n, density, seed)
    lam = np.linalg.eigvalsh(a)
    return a + (margin - lam.min()) * np.eye(n)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE: list = []


def acceptance_line(number, ok, detail):
    _ACCEPTANCE.append(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
