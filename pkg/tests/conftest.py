import numpy as np
import pytest

from discount_pg.linear_system import CostModel, LinearSystem

A_2D = np.array([[4.0, 3.0], [3.0, 1.5]])
B_2D = np.array([[2.0], [2.0]])


@pytest.fixture
def plant_2d():
    return LinearSystem(A_2D, B_2D)


@pytest.fixture
def cost_2d():
    return CostModel(np.eye(2), [[2.0]])


@pytest.fixture
def scalar_system():
    return LinearSystem([[2.0]], [[1.0]])


@pytest.fixture
def scalar_cost():
    return CostModel([[1.0]], [[1.0]])


def random_stable_instance(rng, n=None, m=None, margin=0.02):
    """Random (system, cost, K, gamma) with sqrt(gamma) * rho(A - BK) < 1 - margin."""
    from discount_pg.oracle import spectral_radius

    n = n or int(rng.integers(1, 6))
    m = m or int(rng.integers(1, 4))
    A = rng.normal(size=(n, n))
    B = rng.normal(size=(n, m))
    K = 0.3 * rng.normal(size=(m, n))
    L = rng.normal(size=(n, n))
    Q = L @ L.T + 0.1 * np.eye(n)
    Rl = rng.normal(size=(m, m))
    R = Rl @ Rl.T + 0.1 * np.eye(m)
    rho = spectral_radius(A - B @ K)
    limit = ((1 - margin) / rho) ** 2 if rho > 0 else 1.0
    gamma = float(min(1.0, limit) * rng.uniform(0.05, 1.0))
    return LinearSystem(A, B), CostModel(Q, R), K, gamma


def pytest_terminal_summary(terminalreporter):
    import sys

    lines = []
    for name, mod in list(sys.modules.items()):
        if name.endswith("test_acceptance"):
            lines.extend(getattr(mod, "RESULTS", []))
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
