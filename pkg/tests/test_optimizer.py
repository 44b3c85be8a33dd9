import math

import numpy as np
import pytest

from darb.exceptions import DomainError, InfeasibleSubproblemError
from darb.models.schemas import OptimizerConfig, PowerModel, Seed, SystemConfig
from darb.services.channel import path_loss
from darb.services.optimizer import (
    EEContext, alternating_optimize, central_difference, check_unimodal, element_derivative,
    element_objective, grid_oracle, monte_carlo_ee_at, power_derivative, power_objective,
    solve_p3_elements, solve_p4_power,
)
from darb.services.sysconfig import dbw_to_watts

P_MAX = dbw_to_watts(13.0)


def _context(pm=None, k_users=100, beta=None, spectral=True, c_variant="corrected") -> EEContext:
    return EEContext(pm=pm or PowerModel(), k_users=k_users, beta=beta or path_loss(30.0), sigma2=1e-11,
                     spectral=spectral, c_variant=c_variant)


def _assert_nondecreasing(trace):
    values = [r.ee_value for r in trace]
    assert all(b >= a - 1e-9 * max(1.0, abs(a)) for a, b in zip(values, values[1:]))


@pytest.fixture
def ctx() -> EEContext:
    return _context()


@pytest.fixture
def opt_cfg() -> OptimizerConfig:
    return OptimizerConfig()


class TestContext:
    def test_needs_two_users(self):
        with pytest.raises(DomainError):
            _context(k_users=1)

    def test_power_constants(self, ctx):
        pm = ctx.pm
        assert ctx.p4_constant(18) == pytest.approx(18 * 18 * pm.p_pin + 18 * pm.p_u + ctx.static_power)
        paper = _context(c_variant="paper")
        assert paper.p4_constant(18) == pytest.approx(18 * (pm.p_a + pm.p_u) + pm.p_sa + 100 * pm.p_uk)

    def test_grid_matches_pointwise(self, ctx):
        powers = np.array([0.5, 1.3, 7.0])
        assert np.allclose(ctx.ee_grid(12, powers), [ctx.ee(12, p) for p in powers])


class TestDerivatives:
    @pytest.mark.parametrize("l", [1.5, 6.0, 17.3])
    def test_element_derivative_matches_central_difference(self, ctx, l):
        numeric = central_difference(lambda x: element_objective(x, 1.3, ctx), l)
        assert element_derivative(l, 1.3, ctx) == pytest.approx(numeric, rel=1e-5, abs=1e-6)

    @pytest.mark.parametrize("p", [0.2, 1.3, 12.0])
    def test_power_derivative_matches_central_difference(self, ctx, p):
        numeric = central_difference(lambda x: power_objective(x, 18, ctx), p)
        assert power_derivative(p, 18, ctx) == pytest.approx(numeric, rel=1e-5, abs=1e-6)


class TestRowsSubproblem:
    def test_monotone_objective_hits_upper_bound(self):
        free_rows = _context(pm=PowerModel(p_pin=0.0, p_u=0.0), beta=1.0)
        assert solve_p3_elements(1.0, free_rows, 20).l_integer == 20

    @pytest.mark.parametrize("p_t", [0.3, 1.3, 5.0, 19.0])
    def test_integer_choice_beats_every_other_row_count(self, ctx, p_t):
        solution = solve_p3_elements(p_t, ctx, 20)
        best = max(range(1, 21), key=lambda l: (ctx.ee(l, p_t), -l))
        assert solution.l_integer == best
        assert solution.ee == pytest.approx(ctx.ee(best, p_t))

    @pytest.mark.parametrize("p_t", [0.3, 1.3, 19.0])
    def test_unimodal_for_published_constants(self, ctx, p_t):
        assert check_unimodal(ctx, p_t, 20)

    def test_infeasible(self):
        hopeless = _context(beta=1e-30)
        with pytest.raises(InfeasibleSubproblemError):
            solve_p3_elements(1.0, hopeless, 20)

    def test_bad_power(self, ctx):
        with pytest.raises(DomainError):
            solve_p3_elements(0.0, ctx, 20)


class TestPowerSubproblem:
    def test_first_order_condition(self, ctx):
        solution = solve_p4_power(18, ctx, P_MAX)
        assert solution.p_lo < solution.p_t < P_MAX
        f = power_objective(solution.p_t, 18, ctx)
        assert abs(power_derivative(solution.p_t, 18, ctx)) < 1e-8 * abs(f / solution.p_t)

    @pytest.mark.parametrize("l_beams", [1, 8, 18, 20])
    def test_beats_dense_grid(self, ctx, l_beams):
        solution = solve_p4_power(l_beams, ctx, P_MAX)
        grid = np.logspace(math.log10(solution.p_lo), math.log10(P_MAX), 10_000)[1:]
        assert ctx.ee(l_beams, solution.p_t) >= ctx.ee_grid(l_beams, grid).max() * (1 - 1e-6)

    def test_huge_constant_pushes_to_budget(self):
        heavy = _context(pm=PowerModel(p_sr=1e6))
        assert solve_p4_power(18, heavy, P_MAX).p_t == P_MAX

    def test_infeasible(self):
        with pytest.raises(InfeasibleSubproblemError):
            solve_p4_power(4, _context(beta=1e-30), P_MAX)

    def test_argmax_ignores_objective_scale(self):
        spectral, joules = _context(spectral=True), _context(spectral=False)
        assert solve_p4_power(18, spectral, P_MAX).p_t == solve_p4_power(18, joules, P_MAX).p_t
        assert solve_p3_elements(1.3, spectral, 20).l_integer == solve_p3_elements(1.3, joules, 20).l_integer


class TestAlternatingOptimization:
    def test_published_instance(self, ctx, opt_cfg):
        result = alternating_optimize(opt_cfg, ctx)
        assert result.converged
        assert result.iterations <= 10
        assert result.trace[0].l_value == 1
        assert result.ee_opt == result.trace[-1].ee_value
        assert result.trace[-1].ee_value - result.trace[-2].ee_value < opt_cfg.epsilon
        _assert_nondecreasing(result.trace)

    def test_close_to_grid_oracle(self, ctx, opt_cfg):
        result = alternating_optimize(opt_cfg, ctx)
        _, _, ee_grid = grid_oracle(ctx, opt_cfg)
        assert result.ee_opt >= ee_grid - max(opt_cfg.epsilon, 1e-6 * ee_grid)

    def test_start_at_the_optimum(self, ctx, opt_cfg):
        _, p_grid, _ = grid_oracle(ctx, opt_cfg)
        result = alternating_optimize(OptimizerConfig(p_t_init=p_grid), ctx)
        assert result.converged
        assert result.iterations <= 2

    def test_paper_constant_keeps_ascent(self, opt_cfg):
        result = alternating_optimize(opt_cfg, _context(c_variant="paper"))
        _assert_nondecreasing(result.trace)

    def test_infeasible_carries_trace(self, opt_cfg):
        with pytest.raises(InfeasibleSubproblemError) as info:
            alternating_optimize(opt_cfg, _context(beta=1e-30))
        assert len(info.value.trace) == 1
        assert info.value.trace[0].t == 0

    def test_trace_rows(self, ctx, opt_cfg):
        row = alternating_optimize(opt_cfg, ctx).trace[-1].to_row()
        assert list(row) == ["t", "L", "P_T_w", "P_T_dbw", "EE"]
        assert row["P_T_dbw"] == pytest.approx(10 * math.log10(row["P_T_w"]))

    def test_randomized_instances(self):
        rng = np.random.default_rng(2024)
        for _ in range(100):
            pm = PowerModel(
                p_fpga=0.5 * rng.uniform(0.2, 5.0),
                p_pin=0.005 * rng.uniform(0.2, 5.0),
                p_a=0.1 * rng.uniform(0.2, 5.0),
                p_u=0.1 * rng.uniform(0.2, 5.0),
                p_sr=rng.uniform(0.2, 5.0),
                p_uk=0.01 * rng.uniform(0.2, 5.0),
                eta_t=rng.uniform(0.3, 1.0),
            )
            ctx = _context(pm=pm, k_users=int(rng.integers(10, 201)), beta=path_loss(rng.uniform(10.0, 40.0)),
                           c_variant=str(rng.choice(["corrected", "paper"])))
            cfg = OptimizerConfig(epsilon=0.05)
            result = alternating_optimize(cfg, ctx)
            _assert_nondecreasing(result.trace)
            assert result.iterations <= cfg.max_iterations
            if ctx.c_variant == "corrected":
                assert result.converged
                _, _, ee_grid = grid_oracle(ctx, cfg)
                assert result.ee_opt >= ee_grid - max(cfg.epsilon, 1e-6 * ee_grid)


class TestMonteCarloCheck:
    def test_simulated_ee_at_optimum(self, ctx, opt_cfg):
        result = alternating_optimize(opt_cfg, ctx)
        ee, stderr = monte_carlo_ee_at(result, ctx, SystemConfig(), 200, Seed(5))
        assert ee > 0
        assert stderr >= 0
