"""Model-free cost evaluation from simulated rollouts.

Costs are computed from the states a :class:`~discount_pg.linear_system.Simulator`
returns, with the known weights ``Q``, ``R`` and the gain ``K``. The plant
matrices are never touched here.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import seeding
from .linear_system import BoundedDistribution, CostModel, Simulator, check_gain


class Setting(str, enum.Enum):
    INITIAL_STATE = "initial_state"
    ADDITIVE_NOISE = "additive_noise"


class VacuousBoundWarning(RuntimeWarning):
    """The supplied contraction rate certifies nothing; a fallback horizon was used."""


@dataclass(frozen=True)
class EvalConfig:
    N: int
    tau: int
    dist: BoundedDistribution
    setting: Setting = Setting.INITIAL_STATE
    seed: int = 0

    def __post_init__(self):
        if self.N < 1 or self.tau < 1:
            raise ValueError("N and tau must be positive")
        object.__setattr__(self, "setting", Setting(self.setting))


@dataclass(frozen=True)
class CostEstimate:
    mean: float
    per_trajectory: np.ndarray
    diverged_count: int = 0
    first_divergence: int | None = None
    tail_ratio: float = 0.0

    @property
    def usable(self) -> bool:
        return self.diverged_count == 0 and math.isfinite(self.mean)


def discounted_stage_costs(states, inputs, cost: CostModel, gamma: float) -> np.ndarray:
    """``gamma^t (x'Qx + u'Ru)`` per step and trajectory, shape (horizon, batch)."""
    x = states[:-1]
    stage = ((x @ cost.Q) * x).sum(axis=-1) + ((inputs @ cost.R) * inputs).sum(axis=-1)
    weights = gamma ** np.arange(x.shape[0], dtype=float)
    return stage * weights[:, None]


def _batch_costs(out, cost, gamma):
    costs = discounted_stage_costs(out.states, out.inputs, cost, gamma)
    totals = costs.sum(axis=0)
    totals[out.diverged] = math.inf
    return totals, costs


def draw_inputs(dist: BoundedDistribution, setting: Setting, count: int, tau: int, seed, n: int):
    """Initial states and noise sequences for ``count`` rollouts.

    Returns ``(x0s, noises)``; noises is None in the initial-state setting.
    Draws are prefix-stable: the first k rollouts get the same randomness
    whatever ``count`` is.
    """
    if dist.dimension != n:
        raise ValueError(f"distribution dimension {dist.dimension} != state dimension {n}")
    if Setting(setting) is Setting.INITIAL_STATE:
        return dist.sample(count, seeding.rng(seed, seeding.INITIAL_STATE)), None
    gen = seeding.rng(seed, seeding.NOISE)
    w = np.stack([dist.sample(tau, gen) for _ in range(count)]) if count else np.zeros((0, tau, n))
    return np.zeros((count, n)), w


def truncated_cost(sim: Simulator, cost: CostModel, K, gamma: float, x0, tau: int, noise=None) -> float:
    """Discounted cost of the first ``tau`` steps of one rollout (inf if it diverged)."""
    x0 = np.asarray(x0, dtype=float).reshape(1, -1)
    w = None
    if noise is not None:
        if np.any(x0 != 0):
            raise ValueError("with additive noise the initial state must be zero")
        w = np.asarray(noise, dtype=float).reshape(1, tau, sim.n)
    out = sim.rollout(check_gain(K, sim.n, sim.m), x0, tau, w)
    totals, _ = _batch_costs(out, cost, gamma)
    return float(totals[0])


def _tail_ratio(stage_costs: np.ndarray) -> float:
    """Per-step geometric growth of the mean discounted stage cost over the second half."""
    mean = stage_costs.mean(axis=1)
    t1 = len(mean) - 1
    t0 = t1 // 2
    if t1 - t0 < 1 or mean[t0] <= 0.0 or not math.isfinite(mean[t1]):
        return 0.0
    return float((mean[t1] / mean[t0]) ** (1.0 / (t1 - t0)))


def estimate_cost(sim: Simulator, cost: CostModel, K, gamma: float, cfg: EvalConfig, seed=None) -> CostEstimate:
    """Monte Carlo mean of the truncated cost over ``cfg.N`` rollouts.

    ``seed`` overrides ``cfg.seed`` (an int or a SeedSequence). Any diverged
    rollout makes the estimate unusable: its mean is +inf.
    """
    seed = cfg.seed if seed is None else seed
    K = check_gain(K, sim.n, sim.m)
    x0s, noises = draw_inputs(cfg.dist, cfg.setting, cfg.N, cfg.tau, seed, sim.n)
    out = sim.rollout(K, x0s, cfg.tau, noises)
    totals, stage = _batch_costs(out, cost, gamma)
    diverged = int(out.diverged.sum())
    if diverged:
        first = int(out.diverged_at[out.diverged].min())
        return CostEstimate(math.inf, totals, diverged, first, math.inf)
    return CostEstimate(float(np.mean(totals)), totals, 0, None, _tail_ratio(stage))


def required_horizon(
    j_upper: float,
    d: float,
    sigma_q: float,
    eps: float,
    decay: float | None = None,
    fallback: int = 100,
) -> int:
    """Smallest horizon whose truncation bias is at most ``eps / 2``.

    The tail of the discounted cost beyond step ``tau`` is bounded by
    ``j_upper * d**2 * decay**tau``. By default ``decay = 1 - sigma_q / j_upper``:
    the value matrix ``P`` satisfies ``g Acl' P Acl <= (1 - s/||P||) P`` and
    ``||P|| <= trace(P) <= j_upper``, so the discounted value contracts at
    least that fast. A measured rate (e.g. from :func:`estimate_decay`) can be
    passed instead. A rate >= 1 certifies nothing and ``fallback`` is returned
    with a :class:`VacuousBoundWarning`.
    """
    if not (j_upper > sigma_q > 0 and d > 0 and eps > 0):
        raise ValueError("need j_upper > sigma_q > 0, d > 0, eps > 0")
    top = j_upper * d * d
    if top <= eps / 2:
        return 1
    if decay is None:
        decay = 1.0 - sigma_q / j_upper
    if not 0.0 <= decay < 1.0:
        warnings.warn(
            f"contraction bound {decay:.6g} >= 1 certifies no horizon; using {fallback}",
            VacuousBoundWarning,
            stacklevel=2,
        )
        return int(fallback)
    if decay == 0.0:
        return 1
    tau = math.ceil(math.log(eps / (2 * top)) / math.log(decay))
    while tau > 1 and top * decay ** (tau - 1) <= eps / 2:
        tau -= 1
    while top * decay**tau > eps / 2:
        tau += 1
    return max(1, tau)


def estimate_decay(sim: Simulator, cost: CostModel, K, gamma: float, x0, tau: int = 100) -> float:
    """Per-step contraction of the discounted stage cost, read off one probe rollout."""
    out = sim.rollout(check_gain(K, sim.n, sim.m), np.asarray(x0, dtype=float).reshape(1, -1), tau)
    if out.diverged[0]:
        return math.inf
    stage = discounted_stage_costs(out.states, out.inputs, cost, gamma)
    return _tail_ratio(stage)


def required_samples(j_est: float, d: float, delta: float, j_upper: float | None = None) -> int:
    """Rollout count so that ``|J_hat - J| <= J/2`` with probability ``1 - delta``.

    Each untruncated rollout cost lies in ``[0, j_upper * d**2]``. Half the
    error budget ``eps = J/2`` goes to truncation, so Hoeffding is applied at
    deviation ``eps/2``:  ``N = ceil(2 (j_upper d^2)^2 log(2/delta) / eps^2)``.
    ``j_upper`` defaults to ``2 * j_est``.
    """
    if not (j_est > 0 and d > 0 and 0 < delta < 1):
        raise ValueError("need j_est > 0, d > 0 and 0 < delta < 1")
    j_upper = 2.0 * j_est if j_upper is None else j_upper
    eps = j_est / 2.0
    span = j_upper * d * d
    return math.ceil(2.0 * span * span * math.log(2.0 / delta) / (eps * eps))
