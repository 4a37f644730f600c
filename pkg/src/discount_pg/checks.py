"""Property suites that cross-check the solvers and estimators on random instances.

Each suite returns a :class:`SuiteResult` with the invariant it tests and the
worst margin seen, so a failure names what broke rather than just where.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import oracle, seeding
from .discount import discount_step, update_rate, update_rate_noise
from .linear_system import BoundedDistribution, CostModel, LinearSystem, Simulator
from .rollout import EvalConfig, estimate_cost, required_horizon, required_samples

DEFAULT_INSTANCES = {
    "lyapunov_residual": 100,
    "scaling_identity": 100,
    "jstar_monotonicity": 100,
    "discount_safety": 1000,
    "estimator_consistency": 200,
    "noise_closed_form": 100,
}


@dataclass
class SuiteResult:
    name: str
    invariant: str
    passed: bool
    instances: int
    worst: float
    tolerance: float
    detail: str = ""

    def __post_init__(self):
        self.passed = bool(self.passed)
        self.worst = float(self.worst)

    def as_dict(self) -> dict:
        return asdict(self)


def random_stable_instance(gen: np.random.Generator, n=None, m=None, margin: float = 0.02):
    """Random ``(system, cost, K, gamma)`` with ``sqrt(gamma) * rho(A - BK) < 1 - margin``."""
    n = n or int(gen.integers(1, 6))
    m = m or int(gen.integers(1, 4))
    A = gen.normal(size=(n, n))
    B = gen.normal(size=(n, m))
    K = 0.3 * gen.normal(size=(m, n))
    L = gen.normal(size=(n, n))
    Rl = gen.normal(size=(m, m))
    cost = CostModel(L @ L.T + 0.1 * np.eye(n), Rl @ Rl.T + 0.1 * np.eye(m))
    rho = oracle.spectral_radius(A - B @ K)
    limit = ((1 - margin) / rho) ** 2 if rho > 0 else 1.0
    gamma = float(min(1.0, limit) * gen.uniform(0.05, 1.0))
    return LinearSystem(A, B), cost, K, gamma


def lyapunov_residual(count: int, seed, inject_fault: bool = False) -> SuiteResult:
    tol = 1e-9
    gen = seeding.rng(seed, 0)
    worst = 0.0
    for _ in range(count):
        sys, cost, K, gamma = random_stable_instance(gen)
        P = oracle.solve_discounted_lyapunov(sys, cost, K, gamma).P
        if inject_fault:
            P = P + 1e-3 * np.eye(sys.n)
        res = oracle.lyapunov_residual(P, cost.stage_weight(K), sys.closed_loop(K), gamma)
        worst = max(worst, res / np.linalg.norm(P, "fro"))
    return SuiteResult(
        "lyapunov_residual",
        "residual invariant: ||S + gamma Acl' P Acl - P|| <= 1e-9 ||P||",
        worst <= tol,
        count,
        worst,
        tol,
        "fault injected: P + 1e-3 I" if inject_fault else "",
    )


def scaling_identity(count: int, seed) -> SuiteResult:
    tol = 1e-9
    gen = seeding.rng(seed, 1)
    worst = 0.0
    for _ in range(count):
        sys, cost, K, gamma = random_stable_instance(gen)
        J = oracle.closed_form_cost(sys, cost, K, gamma)
        worst = max(worst, oracle.scaling_identity_check(sys, cost, K, gamma) / J)
    return SuiteResult(
        "scaling_identity",
        "J_gamma(K) on (A, B) equals the undiscounted cost on (sqrt(gamma) A, sqrt(gamma) B)",
        worst <= tol,
        count,
        worst,
        tol,
    )


GAMMA_GRID = (0.05, 0.2, 0.4, 0.6, 0.8, 0.9, 0.95, 1.0)


def jstar_monotonicity(count: int, seed) -> SuiteResult:
    """Worst value of ``(J*_g1 - J*_g2) / J*_g2`` over neighbouring grid points; must be < -1e-10."""
    tol = -1e-10
    gen = seeding.rng(seed, 2)
    worst = -math.inf
    for _ in range(count):
        n = int(gen.integers(2, 6))
        m = int(gen.integers(1, n + 1))
        sys = LinearSystem(gen.normal(size=(n, n)), gen.normal(size=(n, m)))
        cost = CostModel(np.eye(n), np.eye(m))
        values = [oracle.optimal_discounted_cost(sys, cost, g)[0] for g in GAMMA_GRID]
        for lo, hi in zip(values, values[1:]):
            worst = max(worst, (lo - hi) / hi)
    return SuiteResult(
        "jstar_monotonicity",
        "J*_g1 < J*_g2 for g1 < g2, strict by 1e-10 J*_g2",
        worst < tol,
        count,
        worst,
        tol,
    )


def discount_safety(count: int, seed) -> SuiteResult:
    """Estimates anywhere in ``(J/2, 3J/2]`` must keep the next discount inside the finite-cost set."""
    gen = seeding.rng(seed, 3)
    worst = 0.0
    for _ in range(count):
        sys, cost, K, gamma = random_stable_instance(gen)
        J = oracle.closed_form_cost(sys, cost, K, gamma)
        rho = oracle.spectral_radius(sys.closed_loop(K))
        # uniform() excludes the lower end; J/2 itself is tight in one dimension
        j_hat = J * (1.5 - gen.uniform(0.0, 1.0))
        g_new = discount_step(gamma, j_hat, cost.sigma_min(K)).gamma_new
        worst = max(worst, math.sqrt(g_new) * rho)
    return SuiteResult(
        "discount_safety",
        "sqrt(gamma_new) rho(A - BK) < 1 for J_hat in (J/2, 3J/2]",
        worst < 1.0,
        count,
        worst,
        1.0,
    )


ESTIMATOR_INSTANCES = (
    (LinearSystem([[4.0, 3.0], [3.0, 1.5]], [[2.0], [2.0]]), CostModel(np.eye(2), [[2.0]]), [[1.5, 1.0]], 0.5),
    (LinearSystem([[2.0]], [[1.0]]), CostModel([[1.0]], [[1.0]]), [[1.2]], 0.5),
    (
        LinearSystem([[1.1, 0.3, 0.0], [0.0, 0.9, 0.2], [0.1, 0.0, 1.2]], np.eye(3)[:, :2]),
        CostModel(np.eye(3), np.eye(2)),
        [[0.5, 0.1, 0.0], [0.0, 0.3, 0.2]],
        0.5,
    ),
)


def sized_eval(sys: LinearSystem, cost: CostModel, J: float, delta: float = 0.01, seed=0) -> EvalConfig:
    """``(N, tau)`` sized for ``|J_hat - J| <= J/2`` with probability ``1 - delta``."""
    dist = BoundedDistribution("sphere", sys.n)
    N = required_samples(J, dist.d, delta)
    tau = required_horizon(2 * J, dist.d, cost.sigma_min(), J / 2)
    return EvalConfig(N, tau, dist, seed=seed)


def estimator_consistency(count: int, seed, delta: float = 0.01) -> SuiteResult:
    """Per fixed instance, the fraction of ``count`` repetitions inside the ``J/2`` band."""
    worst = 1.0
    for idx, (sys, cost, K, gamma) in enumerate(ESTIMATOR_INSTANCES):
        J = oracle.closed_form_cost(sys, cost, K, gamma)
        cfg = sized_eval(sys, cost, J, delta)
        sim = Simulator(sys)
        hits = sum(
            abs(estimate_cost(sim, cost, K, gamma, cfg, seeding.seed_sequence(seed, 4, idx, rep)).mean - J) <= J / 2
            for rep in range(count)
        )
        worst = min(worst, hits / count)
    return SuiteResult(
        "estimator_consistency",
        "|J_hat - J| <= J/2 in at least 1 - delta of repetitions at the sized (N, tau)",
        worst >= 1 - delta,
        count * len(ESTIMATOR_INSTANCES),
        worst,
        1 - delta,
    )


def noise_series(sys: LinearSystem, cost: CostModel, K, gamma: float, terms: int = 5000) -> float:
    """Sum of discounted expected stage costs under unit-covariance noise, by recursion."""
    Acl = sys.closed_loop(K)
    S = cost.stage_weight(K)
    total, D = 0.0, np.zeros((sys.n, sys.n))
    g_t = 1.0
    for _ in range(terms):
        g_t *= gamma
        D = g_t * np.eye(sys.n) + gamma * Acl @ D @ Acl.T
        term = float(np.sum(S * D))
        total += term
        if term <= 1e-18 * total:
            break
    return total


def noise_closed_form(count: int, seed) -> SuiteResult:
    tol = 1e-9
    gen = seeding.rng(seed, 5)
    worst = 0.0
    rate_gap = 0.0
    for _ in range(count):
        sys, cost, K, gamma = random_stable_instance(gen, margin=0.3)
        gamma = min(gamma, 0.95)
        j_add = oracle.closed_form_cost_noise(sys, cost, K, gamma)
        worst = max(worst, abs(j_add - noise_series(sys, cost, K, gamma)) / j_add)
        J = oracle.closed_form_cost(sys, cost, K, gamma)
        s = cost.sigma_min(K)
        a, b = update_rate(J, s), update_rate_noise(j_add, s, gamma)
        rate_gap = max(rate_gap, abs(a - b) / a)
    return SuiteResult(
        "noise_closed_form",
        "J_add = gamma/(1 - gamma) trace(P) matches the noise series; both update rates agree",
        worst <= tol and rate_gap <= 1e-12,
        count,
        max(worst, rate_gap),
        tol,
        f"series {worst:.3g}, rate {rate_gap:.3g}",
    )


def run_suite(name: str, count: int | None, seed, inject_fault: bool = False) -> SuiteResult:
    count = DEFAULT_INSTANCES[name] if count is None else count
    if name == "lyapunov_residual":
        return lyapunov_residual(count, seed, inject_fault)
    fn = {
        "scaling_identity": scaling_identity,
        "jstar_monotonicity": jstar_monotonicity,
        "discount_safety": discount_safety,
        "estimator_consistency": estimator_consistency,
        "noise_closed_form": noise_closed_form,
    }[name]
    return fn(count, seed)
