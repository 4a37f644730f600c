import math

import numpy as np
import numpy.testing as npt
import pytest

from discount_pg import oracle
from discount_pg.linear_system import BoundedDistribution, CostModel, LinearSystem, Simulator, random_system
from discount_pg.rollout import EvalConfig, Setting
from discount_pg.stabilizer import (
    GradConfig,
    JbarPolicy,
    Mode,
    StabilizationError,
    StabilizerConfig,
    choose_jbar,
    iteration_budget,
    linearized_iteration_budget,
    model_based_pg_step,
    pg_step,
    run,
)


def plant_config(seed=0, **kw):
    return StabilizerConfig(eval=EvalConfig(50, 100, BoundedDistribution("sphere", 2), seed=seed), **kw)


class TestPgStep:
    def test_zero_gradient_keeps_gain(self):
        sim = Simulator(LinearSystem(np.zeros((2, 2)), np.zeros((2, 1))))
        cost = CostModel(np.eye(2), [[1.0]])
        cfg = EvalConfig(5, 5, BoundedDistribution("sphere", 2))
        K, est = pg_step(sim, cost, np.zeros((1, 2)), 0.5, 0.1, GradConfig(0.1, 4, 5), cfg, seed=0)
        npt.assert_array_equal(K, 0.0)
        npt.assert_array_equal(est.G, 0.0)

    def test_zero_step_size_is_identity(self, plant_2d, cost_2d):
        K0 = np.array([[0.25, -0.5]])
        cfg = EvalConfig(5, 20, BoundedDistribution("sphere", 2))
        K, _ = pg_step(Simulator(plant_2d), cost_2d, K0, 1e-3, 0.0, GradConfig(), cfg, seed=1)
        npt.assert_array_equal(K, K0)
        assert K is not K0

    def test_exact_step_descends(self, scalar_system, scalar_cost):
        gamma = 0.04
        K, G = model_based_pg_step(scalar_system, scalar_cost, [[0.0]], gamma, 1e-2)
        assert oracle.closed_form_cost(scalar_system, scalar_cost, K, gamma) < oracle.closed_form_cost(
            scalar_system, scalar_cost, [[0.0]], gamma
        )

    def test_exact_gradient_routes_agree(self, plant_2d, cost_2d):
        K = np.array([[1.5, 1.0]])
        a, _ = model_based_pg_step(plant_2d, cost_2d, K, 0.3, 1e-3, "finite_difference")
        b, _ = model_based_pg_step(plant_2d, cost_2d, K, 0.3, 1e-3, "analytic")
        npt.assert_allclose(a, b, rtol=1e-8)


class TestBudget:
    def test_example(self):
        assert iteration_budget(1.0, 2.0, 1e-3) == 38
        assert linearized_iteration_budget(1.0, 2.0, 1e-3) == pytest.approx(5 * math.log(1e3))

    def test_gamma0_near_one(self):
        assert iteration_budget(1.0, 2.0, 1 - 1e-12) == 1

    def test_linear_in_log_gamma0(self):
        a = iteration_budget(1.0, 3.0, 1e-2)
        b = iteration_budget(1.0, 3.0, 1e-4)
        assert abs(b - 2 * a) <= 1


class TestJbar:
    def test_fixed(self):
        assert choose_jbar(123.0, JbarPolicy("fixed", 10.0)) == 10.0

    def test_auto(self):
        assert choose_jbar(1.7, JbarPolicy("auto", 2.0)) == pytest.approx(3.4)

    def test_auto_needs_multiplier_above_one(self):
        with pytest.raises(ValueError):
            JbarPolicy("auto", 0.5)

    def test_exceeds_optimal_undiscounted_cost(self, plant_2d, cost_2d):
        _, state = run(plant_2d, cost_2d, plant_config(mode="model_based", jbar=JbarPolicy("fixed", 200.0)))
        j_star, _ = oracle.optimal_discounted_cost(plant_2d, cost_2d, 1.0)
        assert j_star < state.jbar
        assert iteration_budget(1.0, state.jbar, 1e-3) >= state.iteration


def dead_beat_iterations(n, gamma0):
    alpha = 1.0 / (2 * n - 1)
    return math.ceil(math.log(1 / gamma0) / math.log1p(alpha))


class TestRun:
    @pytest.mark.parametrize("n", [1, 2, 3])
    def test_dead_beat_iteration_count(self, n):
        sys = LinearSystem(np.zeros((n, n)), np.ones((n, 1)))
        cost = CostModel(np.eye(n), [[1.0]])
        cfg = StabilizerConfig(eval=EvalConfig(10, 20, BoundedDistribution("sphere", n), seed=3), gamma0=1e-3)
        K, state = run(Simulator(sys), cost, cfg)
        npt.assert_array_equal(K, 0.0)
        assert state.iteration == dead_beat_iterations(n, 1e-3)
        assert state.final_gamma >= 1.0

    def test_already_stable_plant(self):
        sys = LinearSystem([[0.5, 0.2], [0.0, 0.3]], [[1.0], [0.5]])
        cost = CostModel(np.eye(2), [[1.0]])
        cfg = StabilizerConfig(eval=EvalConfig(20, 50, BoundedDistribution("sphere", 2), seed=4))
        K, state = run(Simulator(sys), cost, cfg, truth=sys)
        assert oracle.spectral_radius(sys.closed_loop(K)) < 1
        assert all(np.diff([r.gamma for r in state.history]) > 0)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_plant_2d_model_free(self, plant_2d, cost_2d, seed):
        K, state = run(Simulator(plant_2d), cost_2d, plant_config(seed), truth=plant_2d)
        assert oracle.spectral_radius(plant_2d.closed_loop(K)) < 1
        assert state.final_gamma >= 1 > state.history[-1].gamma
        assert state.iteration == len(state.history) < 250
        gammas = [r.gamma for r in state.history]
        assert all(b > a for a, b in zip(gammas, gammas[1:]))
        for rec in state.history[:-1]:
            assert rec.gamma_new == pytest.approx(rec.gamma * (1 + rec.alpha))
            assert rec.rollouts == 50 + 20
        assert state.rollouts == 50 * state.iteration + 20 * (state.iteration - 1)
        assert state.rollouts_n_plus_m == 50 * state.iteration + 10 * (state.iteration - 1)

    def test_records_are_reproducible(self, plant_2d, cost_2d):
        _, a = run(Simulator(plant_2d), cost_2d, plant_config(9))
        _, b = run(Simulator(plant_2d), cost_2d, plant_config(9))
        assert [(r.gamma, r.alpha, r.j_hat, r.grad_norm) for r in a.history] == [
            (r.gamma, r.alpha, r.j_hat, r.grad_norm) for r in b.history
        ]
        npt.assert_array_equal(a.K, b.K)

    def test_stream_prefix_changes_randomness(self, plant_2d, cost_2d):
        _, a = run(Simulator(plant_2d), cost_2d, plant_config(9), stream=(0,))
        _, b = run(Simulator(plant_2d), cost_2d, plant_config(9), stream=(1,))
        assert a.history[0].j_hat != b.history[0].j_hat

    def test_model_based(self, plant_2d, cost_2d):
        K, state = run(plant_2d, cost_2d, plant_config(mode="model_based"))
        assert oracle.spectral_radius(plant_2d.closed_loop(K)) < 1
        assert state.iteration <= 50
        # K^i stays inside the finite-cost set of the next discount
        for rec, nxt in zip(state.history, state.history[1:]):
            assert math.sqrt(rec.gamma_new) * nxt.rho < 1
            assert rec.j_exact == rec.j_hat

    def test_model_based_noise_setting(self, plant_2d, cost_2d):
        cfg = StabilizerConfig(
            eval=EvalConfig(50, 100, BoundedDistribution("sphere", 2), Setting.ADDITIVE_NOISE),
            mode=Mode.MODEL_BASED,
        )
        K, state = run(plant_2d, cost_2d, cfg)
        assert oracle.spectral_radius(plant_2d.closed_loop(K)) < 1
        _, state_init = run(plant_2d, cost_2d, plant_config(mode="model_based"))
        assert state.iteration == state_init.iteration

    def test_model_free_noise_setting_small_plant(self):
        sys = LinearSystem([[1.2, 0.5], [0.0, 0.9]], [[1.0], [0.5]])
        cost = CostModel(np.eye(2), [[1.0]])
        cfg = StabilizerConfig(
            eval=EvalConfig(50, 300, BoundedDistribution("sphere", 2), Setting.ADDITIVE_NOISE, seed=5),
            grad=GradConfig(2e-3, 10, 300),
            gamma0=0.1,
            eta=1e-4,
        )
        K, state = run(Simulator(sys), cost, cfg, truth=sys)
        assert oracle.spectral_radius(sys.closed_loop(K)) < 1

    def test_gamma0_too_large_model_free(self, plant_2d, cost_2d):
        with pytest.raises(StabilizationError, match="initial discount"):
            run(Simulator(plant_2d), cost_2d, plant_config(gamma0=0.5))

    def test_gamma0_too_large_model_based(self, plant_2d, cost_2d):
        with pytest.raises(StabilizationError, match="initial discount"):
            run(plant_2d, cost_2d, plant_config(gamma0=0.5, mode="model_based"))

    def test_iteration_cap(self, plant_2d, cost_2d):
        with pytest.raises(StabilizationError, match="within 5 outer") as err:
            run(Simulator(plant_2d), cost_2d, plant_config(max_outer_iterations=5))
        assert len(err.value.state.history) == 5

    def test_diverging_estimates_abort(self):
        sys = LinearSystem([[1e40]], [[1.0]])
        cost = CostModel([[1.0]], [[1.0]])
        cfg = StabilizerConfig(eval=EvalConfig(3, 10, BoundedDistribution("sphere", 1)))
        with pytest.raises(StabilizationError, match="initial discount") as err:
            run(Simulator(sys), cost, cfg)
        # first try plus one retry with N doubled
        assert err.value.state.rollouts == 3 + 6

    def test_mode_plant_mismatch(self, plant_2d, cost_2d):
        with pytest.raises(TypeError):
            run(plant_2d, cost_2d, plant_config())
        with pytest.raises(TypeError):
            run(Simulator(plant_2d), cost_2d, plant_config(mode="model_based"))

    def test_inner_steps_with_early_exit(self, plant_2d, cost_2d):
        cfg = plant_config(1, inner_steps=3, early_exit=True, jbar=JbarPolicy("fixed", 1e9))
        K, state = run(Simulator(plant_2d), cost_2d, cfg, truth=plant_2d)
        assert oracle.spectral_radius(plant_2d.closed_loop(K)) < 1
        # a huge threshold is met after the first step; each descent costs 2M + N check rollouts
        assert state.history[0].rollouts == 50 + 20 + 50

    def test_snapshots(self, plant_2d, cost_2d):
        K, state = run(plant_2d, cost_2d, plant_config(mode="model_based"))
        assert 0 in state.snapshots and 10 in state.snapshots
        npt.assert_array_equal(state.snapshots[state.iteration - 1], K)


def test_invalid_configs():
    ev = EvalConfig(5, 5, BoundedDistribution("sphere", 2))
    with pytest.raises(ValueError):
        StabilizerConfig(eval=ev, gamma0=1.0)
    with pytest.raises(ValueError):
        StabilizerConfig(eval=ev, inner_steps=0)
    with pytest.raises(ValueError):
        StabilizerConfig(eval=ev, model_gradient="adjoint")


class TestStepRule:
    def cfg(self, rule):
        return StabilizerConfig(
            eval=EvalConfig(1, 1, BoundedDistribution("sphere", 2)), eta=0.5, mode="model_based", step_rule=rule
        )

    def test_constant_step_too_large_aborts(self, plant_2d, cost_2d):
        with pytest.raises(StabilizationError, match="left the finite-cost set"):
            run(plant_2d, cost_2d, self.cfg("constant"))

    def test_backtracking_recovers(self, plant_2d, cost_2d):
        K, state = run(plant_2d, cost_2d, self.cfg("backtracking"))
        assert oracle.spectral_radius(plant_2d.closed_loop(K)) < 1
        assert sum(r.retries for r in state.history) > 0

    def test_unknown_rule(self):
        with pytest.raises(ValueError):
            self.cfg("armijo")
