import math

import numpy as np
import pytest

from bsgs.design import GroupedDesign
from bsgs.sampler import ChainOutput, McmcSettings, PriorHyperparams, run_chain
from bsgs.tuning import GridSpec, c_lower_bounds, default_hyperparams, dic, select_c


class TestDefaultHyperparams:
    def test_lambda1_formula(self):
        prior = default_hyperparams(N=100, T=200, g=10)
        assert prior.lambda1 == pytest.approx(math.log(math.log(200)), abs=1e-12)
        assert prior.lambda1 == pytest.approx(1.6674, abs=1e-3)

    def test_max_dominates(self):
        a = default_hyperparams(N=5, T=200, g=10)
        b = default_hyperparams(N=100, T=200, g=10)
        assert a.lambda1 == b.lambda1

    def test_variance_hyperpriors(self):
        prior = default_hyperparams(N=10, T=50, g=5)
        assert prior.a0 == 2.5
        assert prior.e0 == 5.0
        assert prior.e1 == pytest.approx(10.0 / 3.0)
        assert prior.d0 == 1.0 and prior.d1 == 1.0
        assert prior.c0 is None and prior.c1 is None
        assert prior.hierarchical_a1 and prior.group_specific_pi1

    def test_small_sample_rejected(self):
        with pytest.raises(ValueError):
            default_hyperparams(N=2, T=2, g=3)


class TestLowerBounds:
    def test_reference_values(self):
        c0, _ = c_lower_bounds(N=10, g=10, s0gr_guess=1, u0=1.0, u1=1.0)
        assert c0 == pytest.approx(91.0)
        _, c1 = c_lower_bounds(N=10, g=10, s0gr_guess=1, u0=1.0, u1=1.0)
        assert c1 == pytest.approx(901.0)
        c0_half, _ = c_lower_bounds(N=10, g=10, s0gr_guess=1, u0=1.0, u1=1.0, k0=2.0)
        assert c0_half == pytest.approx(41.0)

    def test_monotonicity(self):
        base = c_lower_bounds(N=12, g=6, s0gr_guess=2, u0=1.0, u1=1.0)
        up_u0 = c_lower_bounds(N=12, g=6, s0gr_guess=2, u0=1.4, u1=1.0)
        up_u1 = c_lower_bounds(N=12, g=6, s0gr_guess=2, u0=1.0, u1=1.4)
        big_k = c_lower_bounds(N=12, g=6, s0gr_guess=2, u0=1.0, u1=1.0, k0=3.0, k1=3.0)
        assert up_u0[0] > base[0] and up_u1[1] > base[1]
        assert big_k[0] < base[0] and big_k[1] < base[1]

    def test_inadmissible_reported(self):
        with pytest.raises(ValueError, match="log\\(2\\)/log\\(N\\)"):
            c_lower_bounds(N=4, g=3, s0gr_guess=1, u0=0.3)
        with pytest.raises(ValueError, match="s0gr"):
            c_lower_bounds(N=10, g=3, s0gr_guess=1, u0=1.0, u1=0.2)

    def test_default_guess(self):
        a = c_lower_bounds(N=30, g=4)
        b = c_lower_bounds(N=30, g=4, s0gr_guess=3)
        assert a == b


def toy_chain_and_design(T=20, seed=0):
    rng = np.random.default_rng(seed)
    Z = rng.standard_normal((T, 4))
    y = rng.standard_normal(T)
    d = GroupedDesign(y, Z, (2, 2))
    prior = PriorHyperparams(c0=3.0, c1=3.0, a0=3.0, a1=2.0, lambda1=1.0)
    chain = run_chain(d, prior, McmcSettings(600, 200, thin=2, seed=seed))
    return chain, d


class TestDic:
    def test_single_draw_collapse(self):
        chain, d = toy_chain_and_design()
        one = ChainOutput(chain.theta_draws[:1], chain.sigma2_draws[:1],
                          chain.pred_var_draws[:1], chain.loglik_draws[:1],
                          chain.inclusion_group, chain.inclusion_within, chain.mcmc_meta)
        assert dic(one, d) == pytest.approx(-2.0 * one.loglik_draws[0], abs=1e-9)

    def test_two_identical_draws(self):
        chain, d = toy_chain_and_design(seed=1)
        rep = ChainOutput(np.repeat(chain.theta_draws[:1], 2, axis=0),
                          np.repeat(chain.sigma2_draws[:1], 2),
                          np.repeat(chain.pred_var_draws[:1], 2),
                          np.repeat(chain.loglik_draws[:1], 2),
                          chain.inclusion_group, chain.inclusion_within, chain.mcmc_meta)
        assert dic(rep, d) == pytest.approx(-2.0 * chain.loglik_draws[0], abs=1e-9)

    def test_independent_oracle_recompute(self):
        chain, d = toy_chain_and_design(seed=2)
        # scripted recomputation straight from the raw draws
        theta_hat = np.median(chain.theta_draws, axis=0)
        s2_hat = chain.sigma2_draws.mean()
        resid = d.y - d.Z @ theta_hat
        ll_hat = -0.5 * (d.T * math.log(2 * math.pi * s2_hat) + resid @ resid / s2_hat)
        lls = np.empty(chain.n_retained)
        for k in range(chain.n_retained):
            r = d.y - d.Z @ chain.theta_draws[k]
            lls[k] = -0.5 * (d.T * math.log(2 * math.pi * chain.sigma2_draws[k])
                             + r @ r / chain.sigma2_draws[k])
        oracle = -4.0 * lls.mean() + 2.0 * ll_hat
        assert dic(chain, d) == pytest.approx(oracle, abs=1e-10)

    def test_thinning_invariance(self):
        chain, d = toy_chain_and_design(seed=3)
        again = ChainOutput(chain.theta_draws, chain.sigma2_draws, chain.pred_var_draws,
                            chain.loglik_draws, chain.inclusion_group,
                            chain.inclusion_within, dict(chain.mcmc_meta, thin=99))
        assert dic(chain, d) == dic(again, d)

    def test_sv_chain_rejected(self):
        chain, d = toy_chain_and_design(seed=4)
        chain.mcmc_meta["volatility"] = "sv"
        with pytest.raises(ValueError):
            dic(chain, d)


class TestGridSpec:
    def test_bounds_validated(self):
        with pytest.raises(ValueError, match="analytic"):
            GridSpec((5.0, 50.0), (10.0, 100.0), points=3, analytic_bounds=(20.0, 5.0))
        GridSpec((20.0, 50.0), (10.0, 100.0), points=3, analytic_bounds=(20.0, 5.0))


class TestSelectC:
    def test_single_point_grid(self):
        _, d = toy_chain_and_design(seed=5)
        prior = PriorHyperparams(c0=None, c1=None, a0=3.0, a1=2.0, lambda1=1.0)
        grid = GridSpec((4.0, 4.0), (6.0, 6.0), points=1, seed=1)
        c0, c1, table = select_c(d, prior, grid, McmcSettings(400, 100, thin=1, seed=2))
        assert (c0, c1) == (4.0, 6.0)
        assert len(table) == 1

    def test_table_budget_and_determinism(self):
        _, d = toy_chain_and_design(seed=6)
        prior = PriorHyperparams(c0=None, c1=None, a0=3.0, a1=2.0, lambda1=1.0)
        grid = GridSpec((2.0, 8.0), (2.0, 8.0), points=4, seed=9)
        m = McmcSettings(400, 100, thin=1, seed=3)
        r1 = select_c(d, prior, grid, m)
        r2 = select_c(d, prior, grid, m)
        assert len(r1[2]) == 4
        assert r1[:2] == r2[:2]
        np.testing.assert_array_equal(r1[2]["dic"].values, r2[2]["dic"].values)

    def test_failures_annotated_not_fatal(self):
        _, d = toy_chain_and_design(seed=7)
        # lambda1 vector of the wrong length fails inside run_chain for every point,
        # so craft a prior failing only via an extreme c0 that still runs: instead
        # monkeypatch is avoided by mixing one invalid (negative-after-replace) point
        prior = PriorHyperparams(c0=None, c1=None, a0=3.0, a1=2.0, lambda1=1.0)
        grid = GridSpec((3.0, 3.0), (3.0, 3.0), points=2, seed=0)
        import bsgs.tuning as tuning_mod
        orig = tuning_mod.run_chain
        calls = {"n": 0}

        def flaky(design, prior, settings, **kw):
            calls["n"] += 1
            if calls["n"] == 1:
                raise RuntimeError("synthetic chain failure")
            return orig(design, prior, settings, **kw)

        tuning_mod.run_chain = flaky
        try:
            c0, c1, table = select_c(d, prior, grid, McmcSettings(300, 100, thin=1, seed=5))
        finally:
            tuning_mod.run_chain = orig
        assert (table["error"] != "").sum() == 1
        assert np.isnan(table["dic"][table["error"] != ""]).all()
        assert np.isfinite(table["dic"][table["error"] == ""]).all()

    def test_argmin_and_tie_break(self, monkeypatch):
        # controlled DIC values: argmin wins; exact ties go to the larger pair
        _, d = toy_chain_and_design(seed=8)
        prior = PriorHyperparams(c0=None, c1=None, a0=3.0, a1=2.0, lambda1=1.0)
        grid = GridSpec((1.0, 50.0), (1.0, 50.0), points=5, seed=4)
        import bsgs.tuning as tuning_mod

        scripted = iter([3.0, 1.0, 7.0, 1.0, 9.0])

        def fake_eval(design, template, c0, c1, mcmc, index):
            return next(scripted), ""

        monkeypatch.setattr(tuning_mod, "_evaluate_point", fake_eval)
        c0, c1, table = select_c(d, prior, grid, McmcSettings(300, 100, thin=1, seed=5))
        tied = table.iloc[[1, 3]]
        expect = tied.sort_values(["c0", "c1"], ascending=False).iloc[0]
        assert (c0, c1) == (expect["c0"], expect["c1"])

    def test_dic_prefers_chain_that_found_signal(self):
        # synthetic chains: one centered on the truth, one stuck at zero
        rng = np.random.default_rng(31)
        Z = rng.standard_normal((60, 4))
        theta0 = np.array([1.5, -1.0, 0.0, 0.0])
        y = Z @ theta0 + 0.3 * rng.standard_normal(60)
        d = GroupedDesign(y, Z, (2, 2))
        from bsgs.tuning import gaussian_loglik

        def synthetic_chain(center, s2):
            draws = center + 0.02 * rng.standard_normal((200, 4))
            lls = np.array([gaussian_loglik(y, Z, th, s2) for th in draws])
            meta = {"volatility": "homoskedastic"}
            return ChainOutput(draws, np.full(200, s2), np.full(200, s2), lls,
                               np.ones(2), np.ones(4), meta)

        good = synthetic_chain(theta0, 0.09)
        null = synthetic_chain(np.zeros(4), float(np.var(y)))
        assert dic(good, d) < dic(null, d)
