"""Discount policy-gradient outer loop.

Each outer iteration estimates the discounted cost of the current gain,
grows the discount factor with the data-driven rate, stops once the discount
reaches 1, and otherwise takes gradient steps on the cost at the new
discount. The model-based mode runs the same loop on exact costs and
gradients from :mod:`discount_pg.oracle`.
"""

from __future__ import annotations

import enum
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import oracle, seeding
from .discount import discount_step, lower_bound_rate
from .errors import EstimateBelowBoundError, UnstablePairError
from .linear_system import CostModel, LinearSystem, Simulator, check_gain
from .rollout import EvalConfig, Setting, estimate_cost
from .zeroth_order import GradientEstimate, estimate_gradient


MAX_HALVINGS = 60


class Mode(str, enum.Enum):
    MODEL_FREE = "model_free"
    MODEL_BASED = "model_based"


@dataclass(frozen=True)
class JbarPolicy:
    """``fixed``: use ``value``. ``auto``: ``value`` times the first cost estimate."""

    kind: str = "auto"
    value: float = 2.0

    def __post_init__(self):
        if self.kind not in ("fixed", "auto"):
            raise ValueError(f"unknown jbar policy {self.kind!r}")
        if self.kind == "auto" and self.value <= 1.0:
            raise ValueError("auto jbar multiplier must exceed 1")
        if self.value <= 0:
            raise ValueError("jbar must be positive")


@dataclass(frozen=True)
class GradConfig:
    r: float = 2e-3
    M: int = 10
    tau: int = 100


@dataclass(frozen=True)
class StabilizerConfig:
    eval: EvalConfig
    grad: GradConfig = GradConfig()
    gamma0: float = 1e-3
    eta: float = 1e-3
    inner_steps: int = 1
    jbar: JbarPolicy = JbarPolicy()
    max_outer_iterations: int = 5000
    mode: Mode = Mode.MODEL_FREE
    early_exit: bool = False
    snapshot_every: int = 10
    # model-based only
    safety_margin: float = 1e-3
    model_gradient: str = "finite_difference"
    step_rule: str = "backtracking"

    def __post_init__(self):
        if not 0.0 < self.gamma0 < 1.0:
            raise ValueError("gamma0 must lie in (0, 1)")
        if self.eta < 0:
            raise ValueError("eta must be nonnegative")
        if self.inner_steps < 1:
            raise ValueError("inner_steps must be >= 1")
        if self.model_gradient not in ("finite_difference", "analytic"):
            raise ValueError(f"unknown model gradient {self.model_gradient!r}")
        if self.step_rule not in ("backtracking", "constant"):
            raise ValueError(f"unknown step rule {self.step_rule!r}")
        object.__setattr__(self, "mode", Mode(self.mode))

    @property
    def setting(self) -> Setting:
        return self.eval.setting

    @property
    def seed(self) -> int:
        return self.eval.seed


@dataclass
class IterationRecord:
    i: int
    gamma: float
    alpha: float
    j_hat: float
    gamma_new: float
    grad_norm: float = math.nan
    rho: float | None = None
    j_exact: float | None = None
    wall_ms: float = 0.0
    rollouts: int = 0
    retries: int = 0


@dataclass
class StabilizerState:
    K: np.ndarray
    gamma: float
    iteration: int = 0
    history: list[IterationRecord] = field(default_factory=list)
    snapshots: dict[int, np.ndarray] = field(default_factory=dict)
    jbar: float | None = None
    final_gamma: float | None = None
    rollouts: int = 0
    rollouts_n_plus_m: int = 0


class StabilizationError(RuntimeError):
    """The loop gave up. ``state`` holds everything recorded up to that point."""

    def __init__(self, reason: str, state: StabilizerState):
        super().__init__(reason)
        self.reason = reason
        self.state = state


class InnerStepError(RuntimeError):
    def __init__(self, estimate: GradientEstimate):
        j, sign = estimate.failure or (-1, 0)
        super().__init__(f"gradient rollout diverged at perturbation {j} (sign {sign:+d})")
        self.estimate = estimate


def choose_jbar(first_estimate: float, policy: JbarPolicy) -> float:
    if policy.kind == "fixed":
        return float(policy.value)
    if not math.isfinite(first_estimate):
        raise ValueError("automatic jbar needs a finite first estimate")
    return policy.value * first_estimate


def iteration_budget(sigma_q: float, j_bar: float, gamma0: float) -> int:
    """Outer iterations needed when every rate meets the floor ``s / (3 J_bar - s)``."""
    if not 0.0 < gamma0 < 1.0:
        raise ValueError("need 0 < gamma0 < 1")
    floor = lower_bound_rate(sigma_q, j_bar)
    return max(1, math.ceil(math.log(1.0 / gamma0) / math.log1p(floor)))


def linearized_iteration_budget(sigma_q: float, j_bar: float, gamma0: float) -> float:
    """The same budget with ``log(1 + x) ~ x``: ``(3 J_bar - s) / s * log(1/gamma0)``."""
    return (3.0 * j_bar - sigma_q) / sigma_q * math.log(1.0 / gamma0)


def pg_step(
    sim: Simulator,
    cost: CostModel,
    K,
    gamma: float,
    eta: float,
    grad: GradConfig,
    eval_cfg: EvalConfig,
    seed,
) -> tuple[np.ndarray, GradientEstimate]:
    """One zeroth-order gradient step ``K - eta * G``; returns the new gain and the estimate.

    Raises :class:`InnerStepError` when a perturbed rollout diverged.
    """
    K = check_gain(K, sim.n, sim.m)
    est = estimate_gradient(
        sim, cost, K, gamma, grad.r, grad.M, grad.tau, eval_cfg.dist, eval_cfg.setting, seed
    )
    if not est.usable:
        raise InnerStepError(est)
    if eta == 0.0:
        return K.copy(), est
    return K - eta * est.G, est


def model_based_pg_step(sys: LinearSystem, cost: CostModel, K, gamma: float, eta: float, method: str = "finite_difference"):
    """Exact-gradient step; returns the new gain and the gradient."""
    if method == "analytic":
        G = oracle.cost_gradient(sys, cost, K, gamma)
    else:
        G = oracle.finite_difference_gradient(sys, cost, K, gamma)
    return np.asarray(K, dtype=float) - eta * G, G


def _exact_cost(sys: LinearSystem, cost: CostModel, K, gamma: float, setting: Setting) -> float:
    try:
        if setting is Setting.ADDITIVE_NOISE:
            return oracle.closed_form_cost_noise(sys, cost, K, gamma)
        return oracle.closed_form_cost(sys, cost, K, gamma)
    except UnstablePairError:
        return math.inf


def run(plant, cost: CostModel, cfg: StabilizerConfig, K0=None, truth: LinearSystem | None = None, stream: tuple = ()):
    """Run the outer loop until the discount reaches 1.

    ``plant`` is a :class:`Simulator` in model-free mode and a
    :class:`LinearSystem` in model-based mode. ``truth`` is optional ground
    truth used only to fill the diagnostic columns of the records. ``stream``
    prefixes every derived seed key (e.g. the trial index).

    Returns ``(K, state)``; raises :class:`StabilizationError` on failure.
    """
    model_based = cfg.mode is Mode.MODEL_BASED
    if model_based:
        if not isinstance(plant, LinearSystem):
            raise TypeError("model-based mode needs the LinearSystem itself")
        truth = plant if truth is None else truth
        sim = None
    else:
        if not isinstance(plant, Simulator):
            raise TypeError("model-free mode takes a Simulator")
        sim = plant
    n, m = (plant.n, plant.m)
    K = np.zeros((m, n)) if K0 is None else check_gain(K0, n, m).copy()
    state = StabilizerState(K=K, gamma=cfg.gamma0)
    noise = cfg.setting is Setting.ADDITIVE_NOISE
    gamma = cfg.gamma0

    def key(i, purpose, k=0, attempt=0):
        return seeding.seed_sequence(cfg.seed, *stream, i, purpose, k, attempt)

    def fail(reason):
        raise StabilizationError(reason, state)

    def diagnostics(rec, K, gamma):
        if truth is None:
            return
        rec.rho = oracle.spectral_radius(truth.closed_loop(K))
        rec.j_exact = _exact_cost(truth, cost, K, gamma, cfg.setting)

    for i in range(cfg.max_outer_iterations):
        t_start = time.perf_counter()
        rollouts = 0
        retries = 0

        # cost of the current gain at the current discount
        if model_based:
            j_hat = _exact_cost(plant, cost, K, gamma, cfg.setting)
            if not math.isfinite(j_hat):
                if i == 0:
                    fail(
                        f"initial discount gamma0={gamma:.6g} is too large: "
                        f"sqrt(gamma0)*rho(A-BK0) = {math.sqrt(gamma) * oracle.spectral_radius(plant.closed_loop(K)):.6g} >= 1"
                    )
                fail(f"gain left the finite-cost region at iteration {i}")
        else:
            eval_cfg = cfg.eval
            est = estimate_cost(sim, cost, K, gamma, eval_cfg, key(i, seeding.COST))
            rollouts += eval_cfg.N
            if not est.usable:
                retries += 1
                est = estimate_cost(sim, cost, K, gamma, _doubled(eval_cfg), key(i, seeding.COST, 0, 1))
                rollouts += 2 * eval_cfg.N
            if not est.usable:
                state.rollouts += rollouts
                if i == 0:
                    fail(f"initial discount gamma0={gamma:.6g} is likely too large: cost rollouts diverged")
                fail(f"cost estimate diverged twice at iteration {i} (step {est.first_divergence})")
            if i == 0 and est.tail_ratio >= 1.0:
                state.rollouts += rollouts
                fail(
                    f"initial discount gamma0={gamma:.6g} is likely too large: discounted stage cost "
                    f"grows along rollouts (tail ratio {est.tail_ratio:.4g})"
                )
            j_hat = est.mean

        sigma = cost.sigma_min(K)
        if state.jbar is None:
            state.jbar = choose_jbar(j_hat, cfg.jbar)

        if model_based:
            j_equiv = (1.0 / gamma - 1.0) * j_hat if noise else j_hat
            alpha = math.inf if j_equiv <= sigma else (1.0 - cfg.safety_margin) * sigma / (j_equiv - sigma)
            gamma_new = (1.0 + alpha) * gamma
        else:
            try:
                step = discount_step(gamma, j_hat, sigma, additive_noise=noise)
            except EstimateBelowBoundError as exc:
                state.rollouts += rollouts
                fail(f"iteration {i}: {exc}")
            alpha, gamma_new = step.alpha, step.gamma_new

        rec = IterationRecord(i=i, gamma=gamma, alpha=alpha, j_hat=j_hat, gamma_new=gamma_new)
        diagnostics(rec, K, gamma)
        if i % cfg.snapshot_every == 0:
            state.snapshots[i] = K.copy()

        if gamma_new >= 1.0:
            rec.wall_ms = 1e3 * (time.perf_counter() - t_start)
            rec.rollouts = rollouts
            rec.retries = retries
            _commit(state, rec, cfg)
            state.final_gamma = gamma_new
            state.snapshots[i] = K.copy()
            state.K = K
            return K, state

        # descend on the cost at the new discount
        grad_norm = math.nan
        for k in range(cfg.inner_steps):
            if model_based:
                try:
                    K_next, G = model_based_pg_step(plant, cost, K, gamma_new, cfg.eta, cfg.model_gradient)
                except UnstablePairError:
                    fail(f"iteration {i}: gain is outside the finite-cost set at gamma={gamma_new:.6g}")
                if cfg.step_rule == "backtracking":
                    # exact costs are available, so shrink eta until the step does not increase the cost
                    j_now = _exact_cost(plant, cost, K, gamma_new, cfg.setting)
                    step, halvings = cfg.eta, 0
                    while not _exact_cost(plant, cost, K_next, gamma_new, cfg.setting) <= j_now:
                        if halvings == MAX_HALVINGS:
                            fail(f"iteration {i}: no descent after {MAX_HALVINGS} step halvings")
                        step /= 2
                        halvings += 1
                        K_next = K - step * G
                    retries += halvings
                elif not math.isfinite(_exact_cost(plant, cost, K_next, gamma_new, cfg.setting)):
                    K = K_next
                    fail(f"iteration {i}: gradient step left the finite-cost set (step size too large?)")
            else:
                try:
                    K_next, g_est = pg_step(sim, cost, K, gamma_new, cfg.eta, cfg.grad, cfg.eval, key(i, seeding.GRADIENT, k))
                    rollouts += 2 * cfg.grad.M
                except InnerStepError:
                    rollouts += 2 * cfg.grad.M
                    retries += 1
                    grad2 = GradConfig(cfg.grad.r, 2 * cfg.grad.M, cfg.grad.tau)
                    try:
                        K_next, g_est = pg_step(sim, cost, K, gamma_new, cfg.eta, grad2, cfg.eval, key(i, seeding.GRADIENT, k, 1))
                        rollouts += 2 * grad2.M
                    except InnerStepError as exc:
                        rollouts += 2 * grad2.M
                        state.rollouts += rollouts
                        fail(f"iteration {i}: gradient estimate failed twice ({exc})")
                G = g_est.G
            grad_norm = float(np.linalg.norm(G))
            K = K_next
            if cfg.early_exit and cfg.inner_steps > 1 and k < cfg.inner_steps - 1:
                if model_based:
                    below = _exact_cost(plant, cost, K, gamma_new, cfg.setting) < state.jbar
                else:
                    check = estimate_cost(sim, cost, K, gamma_new, cfg.eval, key(i, seeding.CHECK, k))
                    rollouts += cfg.eval.N
                    below = check.usable and check.mean < state.jbar
                if below:
                    break

        rec.grad_norm = grad_norm
        rec.wall_ms = 1e3 * (time.perf_counter() - t_start)
        rec.rollouts = rollouts
        rec.retries = retries
        _commit(state, rec, cfg)
        state.K = K
        gamma = gamma_new
        state.gamma = gamma

    fail(f"discount did not reach 1 within {cfg.max_outer_iterations} outer iterations (gamma={gamma:.6g})")


def _commit(state: StabilizerState, rec: IterationRecord, cfg: StabilizerConfig) -> None:
    state.history.append(rec)
    state.iteration = len(state.history)
    state.rollouts += rec.rollouts
    if cfg.mode is Mode.MODEL_FREE:
        descended = not math.isnan(rec.grad_norm)
        state.rollouts_n_plus_m += cfg.eval.N + (cfg.grad.M if descended else 0)


def _doubled(cfg: EvalConfig) -> EvalConfig:
    return EvalConfig(2 * cfg.N, cfg.tau, cfg.dist, cfg.setting, cfg.seed)
