import numpy as np
import pytest

from fedagg.model import (
    GaussianSourceModel,
    MbtcParams,
    RateBudget,
    symmetric_covariance,
)
from fedagg.region import (
    cond_mutual_info,
    constraint_report,
    distortion,
    evaluate_region,
    is_feasible,
    mmse_combiner,
    single_source_rd,
    sum_mutual_info,
)

from oracles import grid_mutual_informations, mc_conditional_mi, mc_mmse_distortion


def make_model(rho, sigma2, m, c=None):
    c = np.full(m, 1.0 / m) if c is None else np.asarray(c, dtype=float)
    return GaussianSourceModel(sigma_x=symmetric_covariance(rho, sigma2, m), c=c)


def random_model(rng, m):
    a = rng.standard_normal((m, m))
    sigma = a @ a.T + 0.1 * np.eye(m)
    return GaussianSourceModel(sigma_x=sigma, c=rng.standard_normal(m))


class TestCondMutualInfo:
    def test_independent_sources_decouple(self):
        model = make_model(0.0, 1.0, 2)
        q = MbtcParams([1.0, 1.0])
        assert cond_mutual_info(model, q, [0]) == pytest.approx(0.5, abs=1e-12)
        assert cond_mutual_info(model, q, [1]) == pytest.approx(0.5, abs=1e-12)

    def test_against_monte_carlo_entropy(self):
        model = make_model(0.9, 1.0, 2)
        q = np.array([0.1, 0.2])
        exact = cond_mutual_info(model, MbtcParams(q), [0])
        mc = mc_conditional_mi(model.sigma_x, q, [0], n_samples=10**6, seed=42)
        assert abs(exact - mc) < 0.02

    def test_rejects_empty_and_full(self):
        model = make_model(0.0, 1.0, 2)
        q = MbtcParams([1.0, 1.0])
        with pytest.raises(ValueError):
            cond_mutual_info(model, q, [])
        with pytest.raises(ValueError):
            cond_mutual_info(model, q, [0, 1])

    def test_bitmask_and_index_agree(self):
        model = make_model(0.5, 2.0, 3)
        q = MbtcParams([0.3, 0.4, 0.5])
        assert cond_mutual_info(model, q, 0b011) == pytest.approx(
            cond_mutual_info(model, q, [0, 1]), abs=1e-14
        )


class TestSumMutualInfo:
    def test_scalar_case(self):
        model = make_model(0.0, 1.0, 1, c=[1.0])
        assert sum_mutual_info(model, MbtcParams([1.0])) == pytest.approx(0.5)

    def test_independent_additivity(self):
        model = make_model(0.0, 1.0, 2)
        assert sum_mutual_info(model, MbtcParams([1.0, 1.0])) == pytest.approx(1.0)

    def test_chain_rule_identity(self):
        rng = np.random.default_rng(11)
        for _ in range(10):
            m = int(rng.integers(2, 6))
            model = random_model(rng, m)
            q = rng.uniform(0.05, 2.0, size=m)
            total = sum_mutual_info(model, MbtcParams(q))
            for mask in range(1, (1 << m) - 1):
                inside = [i for i in range(m) if mask >> i & 1]
                outside = [i for i in range(m) if not mask >> i & 1]
                sigma_out = model.sigma_x[np.ix_(outside, outside)] + np.diag(q[outside])
                marginal = 0.5 * (
                    np.linalg.slogdet(sigma_out)[1] / np.log(2)
                    - np.sum(np.log2(q[outside]))
                )
                combined = cond_mutual_info(model, MbtcParams(q), inside) + marginal
                assert combined == pytest.approx(total, rel=1e-10)

    def test_monotone_decreasing_in_q(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            m = int(rng.integers(2, 5))
            model = random_model(rng, m)
            q = rng.uniform(0.1, 1.0, size=m)
            k = int(rng.integers(0, m))
            q_up = q.copy()
            q_up[k] *= 1.5
            assert sum_mutual_info(model, MbtcParams(q_up)) < sum_mutual_info(
                model, MbtcParams(q)
            ) + 1e-12
            for mask in range(1, (1 << m) - 1):
                if not mask >> k & 1:
                    continue
                assert cond_mutual_info(model, MbtcParams(q_up), mask) < cond_mutual_info(
                    model, MbtcParams(q), mask
                ) + 1e-12


class TestDistortion:
    def test_scalar_mmse(self):
        model = make_model(0.0, 1.0, 1, c=[1.0])
        assert distortion(model, MbtcParams([1.0])) == pytest.approx(0.5)

    def test_perfect_observation_limit(self):
        model = make_model(0.7, 1.0, 3)
        assert distortion(model, MbtcParams([1e-12] * 3)) <= 1e-9

    def test_all_silent_gives_signal_energy(self):
        model = GaussianSourceModel(
            sigma_x=np.array([[1.0, 0.9], [0.9, 1.0]]), c=np.array([0.5, 0.5])
        )
        assert distortion(model, MbtcParams([np.inf, np.inf])) == pytest.approx(0.95)

    def test_weakly_increasing_in_q(self):
        rng = np.random.default_rng(17)
        for _ in range(10):
            m = int(rng.integers(1, 5))
            model = random_model(rng, m)
            q = rng.uniform(0.1, 1.0, size=m)
            k = int(rng.integers(0, m))
            q_up = q.copy()
            q_up[k] *= 2.0
            assert distortion(model, MbtcParams(q_up)) >= distortion(
                model, MbtcParams(q)
            ) - 1e-12

    def test_monte_carlo_consistency(self):
        model = make_model(0.8, 1.0, 3)
        q = np.array([0.2, 0.5, 1.0])
        w = mmse_combiner(model, MbtcParams(q))
        exact = distortion(model, MbtcParams(q))
        mc = mc_mmse_distortion(model.sigma_x, model.c, q, w, seed=9)
        assert mc == pytest.approx(exact, rel=0.01)


class TestMmseCombiner:
    def test_scalar_case(self):
        model = make_model(0.0, 1.0, 1, c=[1.0])
        np.testing.assert_allclose(mmse_combiner(model, MbtcParams([1.0])), [0.5])

    def test_noiseless_limit_recovers_c(self):
        model = make_model(0.6, 2.0, 3, c=[0.2, 0.3, 0.5])
        w = mmse_combiner(model, MbtcParams([1e-12] * 3))
        np.testing.assert_allclose(w, model.c, atol=1e-6)

    def test_symmetry_gives_equal_weights(self):
        model = make_model(0.9, 1.0, 2, c=[0.5, 0.5])
        w = mmse_combiner(model, MbtcParams([0.3, 0.3]))
        assert w[0] == pytest.approx(w[1], rel=1e-12)

    def test_silent_device_weight_zero(self):
        model = make_model(0.5, 1.0, 2, c=[0.5, 0.5])
        w = mmse_combiner(model, MbtcParams([0.3, np.inf]))
        assert w[1] == 0.0

    def test_distortion_identity(self):
        rng = np.random.default_rng(21)
        for _ in range(5):
            m = int(rng.integers(1, 6))
            model = random_model(rng, m)
            q = rng.uniform(0.05, 3.0, size=m)
            w = mmse_combiner(model, MbtcParams(q))
            lhs = distortion(model, MbtcParams(q))
            rhs = float(model.c @ model.sigma_x @ model.c - w @ model.sigma_x @ model.c)
            assert lhs == pytest.approx(rhs, abs=1e-10)


class TestFeasibility:
    def test_scalar_tight(self):
        model = make_model(0.0, 1.0, 1, c=[1.0])
        feasible, slack = is_feasible(model, MbtcParams([1.0 / 3.0]), RateBudget([1.0]))
        assert feasible
        assert slack == pytest.approx(0.0, abs=1e-9)

    def test_scalar_infeasible(self):
        model = make_model(0.0, 1.0, 1, c=[1.0])
        feasible, slack = is_feasible(model, MbtcParams([0.1]), RateBudget([1.0]))
        assert not feasible
        assert slack < 0

    def test_matches_grid_oracle_verdicts(self):
        model = make_model(0.9, 1.0, 2)
        budget = RateBudget([1.0, 1.0])
        axis = np.geomspace(1e-3, 1e3, 100)
        mesh = np.meshgrid(axis, axis, indexing="ij")
        q_grid = np.stack([g.ravel() for g in mesh], axis=1)
        required = grid_mutual_informations(model.sigma_x, q_grid)
        oracle_feasible = np.ones(q_grid.shape[0], dtype=bool)
        for mask, req in required.items():
            inside = [i for i in range(2) if mask >> i & 1]
            oracle_feasible &= req <= float(np.sum(budget.r[inside])) + 1e-9
        for i in range(0, q_grid.shape[0], 97):
            verdict, _ = is_feasible(model, MbtcParams(q_grid[i]), budget)
            assert verdict == oracle_feasible[i]

    def test_constraint_report_columns(self):
        model = make_model(0.5, 1.0, 2)
        rows = constraint_report(model, MbtcParams([0.5, 0.5]), RateBudget([1.0, 1.0]))
        assert [r[0] for r in rows] == [1, 2, 3]
        for mask, req, have, slack in rows:
            assert slack == pytest.approx(have - req, abs=1e-15)


class TestSingleSourceRd:
    @pytest.mark.parametrize(
        "sigma2,rate,q_exp,d_exp",
        [(1.0, 1.0, 1.0 / 3.0, 0.25), (1.0, 0.5, 1.0, 0.5), (4.0, 2.0, 4.0 / 15.0, 0.25)],
    )
    def test_closed_form(self, sigma2, rate, q_exp, d_exp):
        q_star, d_star = single_source_rd(sigma2, rate)
        assert q_star == pytest.approx(q_exp, rel=1e-12)
        assert d_star == pytest.approx(d_exp, rel=1e-12)

    def test_rejects_nonpositive_rate(self):
        with pytest.raises(ValueError):
            single_source_rd(1.0, 0.0)

    def test_distortion_at_rd_point(self):
        for rate in (0.25, 1.0, 3.0):
            q_star, d_star = single_source_rd(2.0, rate)
            model = make_model(0.0, 2.0, 1, c=[1.0])
            assert distortion(model, MbtcParams([q_star])) == pytest.approx(
                d_star, rel=1e-12
            )


class TestRegionEvaluation:
    def test_invariants(self):
        model = make_model(0.7, 1.0, 3)
        ev = evaluate_region(model, MbtcParams([0.2, 0.4, 0.8]))
        ceiling = float(model.c @ model.sigma_x @ model.c)
        assert 0 <= ev.distortion <= ceiling + 1e-9
        for mask, rate in ev.conditional_rates.items():
            assert rate <= ev.sum_rate + 1e-9
