"""Tests for the general-case MM optimizer."""

import numpy as np
import pytest

from fedagg.mm_general import (
    OptimizeResult,
    build_surrogate,
    chi_xi,
    expansion_matrices,
    find_feasible_init,
    quad_form_lower_bound,
    optimize,
    solve_surrogate,
)
from fedagg.model import GaussianSourceModel, MbtcParams, RateBudget, symmetric_covariance
from fedagg.region import cond_mutual_info, distortion, is_feasible, sum_mutual_info
from oracles import grid_search


def random_model(rng, M):
    g = rng.standard_normal((M, M + 2))
    sigma = g @ g.T / (M + 2)
    c = rng.uniform(0.2, 1.0, size=M)
    return GaussianSourceModel(sigma_x=sigma, c=c)


class TestQuadFormLowerBound:
    def test_tight_at_minimizer(self):
        rng = np.random.default_rng(0)
        for _ in range(10):
            B = random_model(rng, 4).sigma_x + 0.1 * np.eye(4)
            a = rng.standard_normal(4)
            b_star = np.linalg.solve(B, a)
            exact = float(a @ b_star)
            assert quad_form_lower_bound(a, b_star, B) == pytest.approx(exact, abs=1e-10)

    def test_lower_bound_elsewhere(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            B = random_model(rng, 3).sigma_x + 0.1 * np.eye(3)
            a = rng.standard_normal(3)
            exact = float(a @ np.linalg.solve(B, a))
            b = rng.standard_normal(3)
            assert quad_form_lower_bound(a, b, B) <= exact + 1e-12

    def test_rejects_indefinite(self):
        with pytest.raises(ValueError):
            quad_form_lower_bound([1.0], [1.0], [[-1.0]])


class TestChiXi:
    def test_tight_at_expansion_point(self):
        # chi_S + xi_S evaluated at the expansion point equals the exact
        # conditional mutual information of the subset.
        rng = np.random.default_rng(2)
        for _ in range(10):
            model = random_model(rng, 4)
            qv = rng.uniform(0.05, 2.0, size=4)
            q = MbtcParams(qv)
            for mask in range(1, 1 << 4):
                S = [m for m in range(4) if mask >> m & 1]
                if len(S) == 4:
                    G = expansion_matrices(model, q, S)
                    bound = chi_xi(model, None, G, q, S)
                    exact = sum_mutual_info(model, q)
                else:
                    E, F = expansion_matrices(model, q, S)
                    bound = chi_xi(model, E, F, q, S)
                    exact = cond_mutual_info(model, q, S)
                assert bound == pytest.approx(exact, abs=1e-9)

    def test_upper_bound_away_from_expansion(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            model = random_model(rng, 3)
            q_hat = MbtcParams(rng.uniform(0.1, 1.0, size=3))
            q = MbtcParams(rng.uniform(0.05, 3.0, size=3))
            for mask in range(1, 1 << 3):
                S = [m for m in range(3) if mask >> m & 1]
                if len(S) == 3:
                    G = expansion_matrices(model, q_hat, S)
                    bound = chi_xi(model, None, G, q, S)
                    exact = sum_mutual_info(model, q)
                else:
                    E, F = expansion_matrices(model, q_hat, S)
                    bound = chi_xi(model, E, F, q, S)
                    exact = cond_mutual_info(model, q, S)
                assert bound >= exact - 1e-10


class TestSurrogate:
    def test_constraint_rows_tight_at_expansion(self):
        rng = np.random.default_rng(4)
        model = random_model(rng, 3)
        budget = RateBudget(np.array([5.0, 5.0, 5.0]))
        q_hat = find_feasible_init(model, budget)
        prob = build_surrogate(model, budget, q_hat)
        vals = prob.constraint_values(q_hat.q)
        for mask, val in zip(prob.masks, vals):
            S = [m for m in range(3) if mask >> m & 1]
            if len(S) == 3:
                exact = sum_mutual_info(model, q_hat)
                bud = float(np.sum(budget.r))
            else:
                exact = cond_mutual_info(model, q_hat, S)
                bud = float(np.sum(budget.r[S]))
            assert val == pytest.approx(exact - bud, abs=1e-9)

    def test_rejects_infeasible_expansion(self):
        model = GaussianSourceModel(sigma_x=np.eye(2), c=np.ones(2))
        budget = RateBudget(np.array([0.1, 0.1]))
        with pytest.raises(ValueError):
            build_surrogate(model, budget, MbtcParams(np.full(2, 1e-6)))

    def test_surrogate_solution_feasible_for_original(self):
        rng = np.random.default_rng(5)
        for _ in range(5):
            model = random_model(rng, 3)
            budget = RateBudget(rng.uniform(0.5, 2.0, size=3))
            q_hat = find_feasible_init(model, budget)
            prob = build_surrogate(model, budget, q_hat)
            q = solve_surrogate(prob)
            ok, worst = is_feasible(model, q, budget)
            assert ok, worst


class TestOptimize:
    def test_single_source_closed_form(self):
        # M = 1 optimum: q* = sigma^2 / (2^{2R} - 1), D* = sigma^2 2^{-2R}.
        sigma2 = 1.7
        model = GaussianSourceModel(sigma_x=np.array([[sigma2]]), c=np.array([1.0]))
        for R in (0.5, 1.0, 2.0):
            res = optimize(model, RateBudget(np.array([R])))
            assert res.distortion == pytest.approx(sigma2 * 2.0 ** (-2 * R), abs=1e-8)
            assert res.q.q[0] == pytest.approx(sigma2 / (2.0 ** (2 * R) - 1), rel=1e-6)

    def test_trace_monotone_and_feasible(self):
        rng = np.random.default_rng(6)
        for _ in range(5):
            model = random_model(rng, 3)
            budget = RateBudget(rng.uniform(0.5, 2.0, size=3))
            res = optimize(model, budget)
            diffs = np.diff(np.array(res.trace))
            assert np.all(diffs >= -1e-10)
            ok, worst = is_feasible(model, res.q, budget)
            assert ok, worst

    def test_matches_grid_oracle_m2(self):
        rng = np.random.default_rng(7)
        model = GaussianSourceModel(
            sigma_x=symmetric_covariance(0.6, 1.0, 2), c=np.array([0.5, 0.5])
        )
        budget = RateBudget(np.array([1.0, 1.5]))
        res = optimize(model, budget)
        _, d_grid = grid_search(model.sigma_x, model.c, budget.r, n_per_axis=160)
        assert res.distortion <= d_grid * (1 + 1e-3)

    def test_result_fields(self):
        model = GaussianSourceModel(sigma_x=np.eye(2), c=np.ones(2))
        res = optimize(model, RateBudget(np.ones(2)))
        assert isinstance(res, OptimizeResult)
        assert res.iterations >= 1
        assert len(res.iterates) == len(res.trace)
        assert res.distortion == pytest.approx(
            distortion(model, res.q), abs=1e-12
        )
