"""Tests for the brute-force history-gain oracle."""

import numpy as np
import pytest

from delqg import corpus
from delqg.model import Mode, Pattern
from delqg.oracle import (LiftedProblem, StructuredPolicyParams, exact_policy_cost, info_mask,
                          oracle_optimize, params_from_policy)
from delqg.policy import noiseless_cost, synthesize, zero_policy
from delqg.sim import exact_closed_loop_cost

from conftest import random_nested_plant


class TestInfoMask:
    def test_one_inf_two_by_two(self, nested_2x2):
        mask = info_mask(nested_2x2.model, Pattern.ONE_INF, Mode.STATE)
        # rows u1(0) u2(0) u1(1) u2(1) ...; columns x1(0) x2(0) x1(1) ...
        expect = np.array([
            [1, 0, 0, 0, 0, 0],
            [0, 1, 0, 0, 0, 0],
            [1, 0, 1, 0, 0, 0],
            [1, 1, 0, 1, 0, 0],
            [1, 0, 1, 0, 1, 0],
            [1, 1, 1, 1, 0, 1],
        ], dtype=bool)
        np.testing.assert_array_equal(mask, expect)

    def test_nesting(self, scenario):
        m = scenario.model
        mode = scenario.mode
        oi = info_mask(m, Pattern.ONE_INF, mode)
        oz = info_mask(m, Pattern.ONE_ZERO, mode)
        nd = info_mask(m, Pattern.NO_DELAY, mode)
        ce = info_mask(m, Pattern.CENTRALIZED, mode)
        assert np.all(oz >= oi) and np.all(nd >= oi)
        assert np.all(ce >= oz) and np.all(ce >= nd)

    def test_causal(self, scenario):
        mask = info_mask(scenario.model, Pattern.CENTRALIZED, scenario.mode)
        N = scenario.model.N
        blocks = mask.reshape(N, mask.shape[0] // N, N, mask.shape[1] // N)
        for t in range(N):
            assert not blocks[t, :, t + 1:, :].any()


class TestParams:
    def test_index_bijective(self, nested_2x2):
        mask = info_mask(nested_2x2.model, Pattern.ONE_INF, Mode.STATE)
        par = StructuredPolicyParams(mask, np.arange(mask.sum(), dtype=float), 1, 2)
        idx = par.index()
        assert len(set(idx)) == len(idx) == mask.sum()
        G = par.matrix()
        for k, (player, t, tau, i, j) in enumerate(idx):
            assert G[t * 2 + i, tau * 2 + j] == k
            assert player == (1 if i < 1 else 2) and tau <= t
        back = StructuredPolicyParams.from_matrix(mask, G, 1, 2)
        np.testing.assert_array_equal(back.theta, par.theta)

    def test_mask_mismatch(self, nested_2x2):
        mask = info_mask(nested_2x2.model, Pattern.ONE_ZERO, Mode.STATE)
        par = StructuredPolicyParams(mask, np.zeros(mask.sum()), 1, 2)
        with pytest.raises(ValueError, match="index map"):
            exact_policy_cost(nested_2x2.model, Pattern.ONE_INF, Mode.STATE, par)

    def test_forbidden_observation_detected(self, nested_2x2):
        syn = synthesize(nested_2x2.model, Pattern.ONE_ZERO, Mode.STATE)
        with pytest.raises(ValueError, match="forbidden"):
            params_from_policy(syn.policy, Pattern.ONE_INF)


class TestLiftedCost:
    def test_zero_params_is_zero_policy(self, scenario):
        prob = LiftedProblem(scenario.model, scenario.pattern, scenario.mode)
        J0 = prob.cost(np.zeros(prob.mask.shape))
        assert J0 == pytest.approx(
            exact_closed_loop_cost(scenario.model, zero_policy(scenario.model, scenario.mode)),
            rel=1e-12)

    def test_policy_cost_agrees(self, scenario):
        syn = synthesize(scenario.model, scenario.pattern, scenario.mode)
        par = params_from_policy(syn.policy)
        J = exact_policy_cost(scenario.model, scenario.pattern, scenario.mode, par)
        assert J == pytest.approx(syn.cost, rel=1e-10)

    def test_scaling_q_scales_state_part(self, nested_2x2):
        m = nested_2x2.model
        prob = LiftedProblem(m, Pattern.ONE_INF, Mode.STATE)
        prob2 = LiftedProblem(m.replace(Q=2 * m.Q, S=2 * m.S), Pattern.ONE_INF, Mode.STATE)
        G = np.where(prob.mask, np.random.default_rng(3).standard_normal(prob.mask.shape), 0)
        _, Mu, Mx = prob.closed_loop(G)
        u_part = np.sum((prob.Rbar @ Mu @ prob.Omega) * Mu)
        x_part = prob.cost(G) - u_part
        assert prob2.cost(G) == pytest.approx(u_part + 2 * x_part, rel=1e-13)

    def test_gradient_matches_finite_differences(self, rng):
        model = random_nested_plant(rng, 1, 1, N=3, output="partial")
        prob = LiftedProblem(model, Pattern.ONE_INF, Mode.PARTIAL_OUTPUT)
        k = int(prob.mask.sum())
        eps = 1e-6
        for _ in range(10):
            theta = 0.3 * rng.standard_normal(k)
            _, g = prob.fun(theta)
            fd = np.array([(prob.fun(theta + eps * e)[0] - prob.fun(theta - eps * e)[0])
                           / (2 * eps) for e in np.eye(k)])
            assert np.max(np.abs(g - fd)) <= 1e-6 * max(1.0, np.max(np.abs(fd)))


class TestOptimize:
    def test_recovers_synthesized_cost(self, scenario):
        syn = synthesize(scenario.model, scenario.pattern, scenario.mode)
        res = oracle_optimize(scenario.model, scenario.pattern, scenario.mode, restarts=4)
        assert res.best_cost == pytest.approx(syn.cost, rel=1e-7)
        assert any(res.converged)

    def test_upper_bound_is_sound(self, nested_2x2):
        res = oracle_optimize(nested_2x2.model, Pattern.ONE_INF, Mode.STATE, restarts=2)
        assert exact_policy_cost(nested_2x2.model, Pattern.ONE_INF, Mode.STATE,
                                 res.best_params) == pytest.approx(res.best_cost, rel=1e-14)
        assert res.best_cost == min(res.costs)

    def test_more_information_never_hurts(self, rng):
        model = random_nested_plant(rng, 1, 1, N=3)
        best = {p: oracle_optimize(model, p, Mode.STATE, restarts=2).best_cost
                for p in Pattern}
        tol = 1e-8 * best[Pattern.ONE_INF]
        assert best[Pattern.ONE_ZERO] <= best[Pattern.ONE_INF] + tol
        assert best[Pattern.NO_DELAY] <= best[Pattern.ONE_INF] + tol
        assert best[Pattern.CENTRALIZED] <= min(best[Pattern.ONE_ZERO],
                                                best[Pattern.NO_DELAY]) + tol

    def test_deterministic_plant_is_lqr(self, rng):
        model = random_nested_plant(rng, 1, 1, N=3)
        x0 = np.array([0.4, -1.1])
        zero = np.zeros((2, 2))
        model = model.replace(V=zero, cov0=np.outer(x0, x0))
        res = oracle_optimize(model, Pattern.CENTRALIZED, Mode.STATE, restarts=2)
        assert res.best_cost == pytest.approx(noiseless_cost(model, x0), rel=1e-9)

    def test_seeded(self, nested_2x2):
        a = oracle_optimize(nested_2x2.model, Pattern.ONE_INF, Mode.STATE, restarts=2, seed=5)
        b = oracle_optimize(nested_2x2.model, Pattern.ONE_INF, Mode.STATE, restarts=2, seed=5)
        assert a.costs == b.costs

    def test_warm_start_is_included(self, nested_2x2):
        syn = synthesize(nested_2x2.model, Pattern.ONE_INF, Mode.STATE)
        res = oracle_optimize(nested_2x2.model, Pattern.ONE_INF, Mode.STATE, restarts=1,
                              init=[params_from_policy(syn.policy)])
        assert res.restarts == 2

    def test_rejects_no_restarts(self, nested_2x2):
        with pytest.raises(ValueError):
            oracle_optimize(nested_2x2.model, Pattern.ONE_INF, Mode.STATE, restarts=0)

    def test_thread_cap(self, nested_2x2, monkeypatch):
        monkeypatch.setenv("DELQG_THREADS", "1")
        res = oracle_optimize(nested_2x2.model, Pattern.ONE_INF, Mode.STATE, restarts=2)
        assert res.restarts == 2
