"""Two-point zeroth-order estimate of the discounted cost gradient."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import seeding
from .linear_system import BoundedDistribution, CostModel, Simulator, check_gain
from .rollout import Setting, _batch_costs, draw_inputs


@dataclass(frozen=True)
class GradientEstimate:
    G: np.ndarray
    r: float
    M: int
    tau: int
    seed: dict = field(default_factory=dict)
    failure: tuple[int, int] | None = None  # (perturbation index, +1/-1) of the first diverged rollout

    @property
    def usable(self) -> bool:
        return self.failure is None and bool(np.all(np.isfinite(self.G)))


def sample_sphere_perturbation(m: int, n: int, rng: np.random.Generator, count: int | None = None) -> np.ndarray:
    """Uniform draw from the Frobenius sphere of radius ``sqrt(m n)`` in gain space.

    A standard Gaussian in R^{mn} is normalized and reshaped row-major into
    (m, n). ``count`` draws a stack of shape (count, m, n).
    """
    if m < 1 or n < 1:
        raise ValueError("m and n must be positive")
    k = 1 if count is None else count
    z = rng.standard_normal((k, m * n))
    norms = np.linalg.norm(z, axis=1)
    while np.any(norms == 0.0):
        bad = norms == 0.0
        z[bad] = rng.standard_normal((int(bad.sum()), m * n))
        norms = np.linalg.norm(z, axis=1)
    U = (math.sqrt(m * n) * z / norms[:, None]).reshape(k, m, n)
    return U[0] if count is None else U


def estimate_gradient(
    sim: Simulator,
    cost: CostModel,
    K,
    gamma: float,
    r: float,
    M: int,
    tau: int,
    dist: BoundedDistribution,
    setting: Setting = Setting.INITIAL_STATE,
    seed=0,
    perturbations: np.ndarray | None = None,
) -> GradientEstimate:
    """Average of ``(V(K + rU) - V(K - rU)) U / (2r)`` over ``M`` perturbations.

    Both gains of a pair see the same initial state (or the same noise
    sequence). ``perturbations`` overrides the random directions, for testing.
    """
    if r <= 0 or M < 1:
        raise ValueError("need r > 0 and M >= 1")
    n, m = sim.n, sim.m
    K = check_gain(K, n, m)
    if perturbations is None:
        U = sample_sphere_perturbation(m, n, seeding.rng(seed, seeding.PERTURBATION), count=M)
    else:
        U = np.asarray(perturbations, dtype=float).reshape(M, m, n)
    x0s, noises = draw_inputs(dist, setting, M, tau, seed, n)
    # rows 0..M-1 are K + rU, rows M..2M-1 are K - rU
    gains = np.concatenate([K + r * U, K - r * U])
    x0_pair = np.concatenate([x0s, x0s])
    noise_pair = None if noises is None else np.concatenate([noises, noises])
    out = sim.rollout(gains, x0_pair, tau, noise_pair)
    totals, _ = _batch_costs(out, cost, gamma)
    desc = seeding.describe(seed)
    if np.any(out.diverged):
        first = int(np.flatnonzero(out.diverged)[0])
        failure = (first % M, 1 if first < M else -1)
        return GradientEstimate(np.full((m, n), np.nan), r, M, tau, desc, failure)
    diff = totals[:M] - totals[M:]
    G = np.einsum("j,jab->ab", diff, U) / (2.0 * r * M)
    return GradientEstimate(G, r, M, tau, desc)
