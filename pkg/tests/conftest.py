import numpy as np
import pytest

from amghess.hierarchy import HierarchyConfig
from amghess.problems import structured_problem
from amghess.optctl import ControlProblem


def laplace_1d(n):
    import scipy.sparse as sp

    return sp.diags([-np.ones(n - 1), 2 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1], format="csr")


def random_spd(rng, n, cond=10.0):
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    return (Q * np.geomspace(1.0, cond, n)) @ Q.T


@pytest.fixture(scope="session")
def geo3_2d():
    """Three-level geometric 2D hierarchy, 8 cells (81 controls)."""
    return structured_problem(2, 8, "geometric", n_levels=3)


@pytest.fixture(scope="session")
def amg3_2d():
    """Three-level AMG 2D hierarchy on 12 cells (169 controls)."""
    return structured_problem(2, 12, "amg", config=HierarchyConfig(coarse_cap=5), n_levels=3)


@pytest.fixture
def tiny_problem(geo3_2d):
    rng = np.random.default_rng(7)
    y_d = rng.standard_normal(geo3_2d.fe.n_state)
    return ControlProblem(geo3_2d.hierarchy, 0.05, y_d)
