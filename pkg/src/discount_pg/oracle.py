"""Model-based ground truth for the discounted LQR problem.

Everything here reads ``A`` and ``B`` directly. It is used to verify the
model-free estimators, to drive the model-based variant of the stabilizer,
and by the acceptance suite. The model-free path never calls into it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import NotStabilizableError, NumericalError, UnstablePairError
from .linear_system import CostModel, LinearSystem, check_gain

KRON_MAX_N = 60
LYAP_RTOL = 1e-12
LYAP_MAX_ITER = 1_000_000
RICCATI_MAX_ITER = 100_000


def spectral_radius(M) -> float:
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"spectral radius needs a square matrix, got {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix has non-finite entries")
    try:
        eig = np.linalg.eigvals(M)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigenvalues did not converge (cond={np.linalg.cond(M):.3g})") from exc
    return float(np.max(np.abs(eig), initial=0.0))


@dataclass(frozen=True)
class LyapunovCertificate:
    """Solution of ``P = S + gamma * Acl' P Acl`` and how well it satisfies it."""

    P: np.ndarray
    gamma: float
    residual: float

    @property
    def cost(self) -> float:
        return float(np.trace(self.P))


def lyapunov_residual(P, S, Acl, gamma: float) -> float:
    return float(np.linalg.norm(P - (S + gamma * Acl.T @ P @ Acl), "fro"))


def _lyap_kron(S, Acl, gamma):
    n = S.shape[0]
    # vec(Acl' P Acl) = kron(Acl', Acl') vec(P) for row-major vec
    L = np.eye(n * n) - gamma * np.kron(Acl.T, Acl.T)
    return np.linalg.solve(L, S.reshape(-1)).reshape(n, n)


def _lyap_fixed_point(S, Acl, gamma, rtol=LYAP_RTOL, max_iter=LYAP_MAX_ITER):
    P = S.copy()
    G = gamma * Acl
    for _ in range(max_iter):
        P_next = S + Acl.T @ P @ G
        if np.linalg.norm(P_next - P, "fro") <= rtol * np.linalg.norm(P, "fro"):
            return P_next
        P = P_next
    raise NumericalError(f"Lyapunov fixed point did not converge in {max_iter} iterations")


def _lyap_bilinear(S, Acl, gamma):
    return scipy.linalg.solve_discrete_lyapunov(math.sqrt(gamma) * Acl.T, S)


def solve_lyapunov(S, Acl, gamma: float, method: str = "auto") -> np.ndarray:
    """Solve ``P = S + gamma * Acl' P Acl`` for a stable scaled closed loop.

    ``auto`` uses scipy's solver and one step of iterative refinement;
    ``kron`` and ``fixed_point`` are the direct and iterative routes kept as
    independent cross-checks.
    """
    S = np.asarray(S, dtype=float)
    Acl = np.asarray(Acl, dtype=float)
    if method == "kron":
        P = _lyap_kron(S, Acl, gamma)
    elif method == "fixed_point":
        P = _lyap_fixed_point(S, Acl, gamma)
    elif method == "auto":
        P = _lyap_bilinear(S, Acl, gamma)
        # the equation is linear, so the residual can be solved for and added back
        E = S + gamma * Acl.T @ P @ Acl - P
        P = P + _lyap_bilinear(E, Acl, gamma)
    else:
        raise ValueError(f"unknown Lyapunov method {method!r}")
    return 0.5 * (P + P.T)


def _check_stable(Acl, gamma):
    rho = spectral_radius(Acl)
    if math.sqrt(gamma) * rho >= 1.0:
        raise UnstablePairError(rho, gamma)
    return rho


def solve_discounted_lyapunov(
    sys: LinearSystem, cost: CostModel, K, gamma: float, method: str = "auto"
) -> LyapunovCertificate:
    """Value matrix ``P`` of gain ``K`` at discount ``gamma``; cost is ``trace(P)``."""
    if not 0.0 < gamma:
        raise ValueError("gamma must be positive")
    Acl = sys.closed_loop(K)
    _check_stable(Acl, gamma)
    S = cost.stage_weight(K)
    P = solve_lyapunov(S, Acl, gamma, method)
    res = lyapunov_residual(P, S, Acl, gamma)
    if res > 1e-9 * np.linalg.norm(P, "fro") and method == "auto":
        P = solve_lyapunov(S, Acl, gamma, "fixed_point" if sys.n > KRON_MAX_N else "kron")
        res = lyapunov_residual(P, S, Acl, gamma)
    return LyapunovCertificate(P, float(gamma), res)


def closed_form_cost(sys: LinearSystem, cost: CostModel, K, gamma: float) -> float:
    """Discounted cost from random initial states with identity covariance."""
    return solve_discounted_lyapunov(sys, cost, K, gamma).cost


def closed_form_cost_noise(sys: LinearSystem, cost: CostModel, K, gamma: float) -> float:
    """Discounted cost under unit-covariance additive noise from ``x0 = 0``."""
    if gamma >= 1.0:
        raise ValueError("additive-noise discounted cost needs gamma < 1")
    return gamma / (1.0 - gamma) * closed_form_cost(sys, cost, K, gamma)


def state_correlation(sys: LinearSystem, K, gamma: float) -> np.ndarray:
    """``sum_t gamma^t Acl^t Acl'^t``, the discounted state correlation from x0 ~ (0, I)."""
    Acl = sys.closed_loop(K)
    _check_stable(Acl, gamma)
    return solve_lyapunov(np.eye(sys.n), Acl.T, gamma)


def cost_gradient(sys: LinearSystem, cost: CostModel, K, gamma: float) -> np.ndarray:
    """Analytic gradient ``2 ((R + g B'PB) K - g B'PA) Sigma`` of the discounted cost."""
    K = check_gain(K, sys.n, sys.m)
    P = solve_discounted_lyapunov(sys, cost, K, gamma).P
    Sigma = state_correlation(sys, K, gamma)
    E = (cost.R + gamma * sys.B.T @ P @ sys.B) @ K - gamma * sys.B.T @ P @ sys.A
    return 2.0 * E @ Sigma


def finite_difference_gradient(sys: LinearSystem, cost: CostModel, K, gamma: float, step: float = 1e-5) -> np.ndarray:
    """Central differences of :func:`closed_form_cost`, entry by entry."""
    K = check_gain(K, sys.n, sys.m)
    G = np.zeros_like(K)
    for idx in np.ndindex(*K.shape):
        E = np.zeros_like(K)
        E[idx] = step
        G[idx] = (closed_form_cost(sys, cost, K + E, gamma) - closed_form_cost(sys, cost, K - E, gamma)) / (2 * step)
    return G


def riccati_residual(P, A, B, Q, R) -> float:
    BtP = B.T @ P
    rhs = Q + A.T @ P @ A - (BtP @ A).T @ np.linalg.solve(R + BtP @ B, BtP @ A)
    return float(np.linalg.norm(P - rhs, "fro"))


def optimal_discounted_cost(sys: LinearSystem, cost: CostModel, gamma: float, rtol: float = 1e-12, max_iter: int = RICCATI_MAX_ITER):
    """Optimal cost and gain at discount ``gamma``.

    Runs Riccati value iteration on the damped pair ``(sqrt(g) A, sqrt(g) B)``
    starting from ``P = Q``. Returns ``(trace(P*), K*)``.
    """
    scaled = sys.scaled(gamma)
    A, B, Q, R = scaled.A, scaled.B, cost.Q, cost.R
    P = Q.copy()
    for _ in range(max_iter):
        BtP = B.T @ P
        K = np.linalg.solve(R + BtP @ B, BtP @ A)
        Acl = A - B @ K
        P_next = Q + K.T @ R @ K + Acl.T @ P @ Acl
        P_next = 0.5 * (P_next + P_next.T)
        if not np.all(np.isfinite(P_next)):
            break
        if np.linalg.norm(P_next - P, "fro") <= rtol * np.linalg.norm(P, "fro"):
            P = P_next
            BtP = B.T @ P
            K = np.linalg.solve(R + BtP @ B, BtP @ A)
            res = riccati_residual(P, A, B, Q, R)
            if res > 1e-9 * np.linalg.norm(P, "fro"):
                raise NumericalError(f"Riccati residual {res:.3g} too large")
            # the gain for the damped pair is also optimal for the discounted problem
            return float(np.trace(P)), K
        P = P_next
    raise NotStabilizableError(f"Riccati iteration did not converge at gamma={gamma:.6g}; not stabilizable")


def exact_discount_step(sys: LinearSystem, cost: CostModel, K, gamma: float) -> float:
    """Largest discount the Lyapunov argument certifies from the exact cost.

    ``gamma' = (1 + s / (J - s)) * gamma`` with ``s`` the smallest eigenvalue of
    ``Q + K'RK`` and ``J`` the exact discounted cost. Returns ``inf`` when
    ``J == s`` (the closed loop is dead-beat in one dimension).
    """
    J = closed_form_cost(sys, cost, K, gamma)
    s = cost.sigma_min(K)
    if J <= s:
        return math.inf
    return (1.0 + s / (J - s)) * gamma


def scaling_identity_check(sys: LinearSystem, cost: CostModel, K, gamma: float) -> float:
    """``|J_gamma(K; A, B) - J_1(K; sqrt(g) A, sqrt(g) B)|``."""
    if gamma == 1.0:
        return 0.0
    lhs = closed_form_cost(sys, cost, K, gamma)
    rhs = closed_form_cost(sys.scaled(gamma), cost, K, 1.0)
    return abs(lhs - rhs)


def optimal_discount(sys: LinearSystem, K) -> float:
    """``1 / rho(A - BK)^2``, the largest discount with finite cost (inf for nilpotent loops)."""
    rho = spectral_radius(sys.closed_loop(K))
    return math.inf if rho == 0.0 else 1.0 / rho**2
