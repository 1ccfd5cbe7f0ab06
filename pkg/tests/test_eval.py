import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bsgs.evaluation import (ar1_benchmark, ar1_oos_densities, bilevel_sparse_singular_value,
                             crps_empirical, crps_gaussian_mixture, estimation_metrics,
                             fit_ar1, forecast_scores, mcc, optimal_pool, pool_density,
                             selection_metrics)
from bsgs.sampler import ForecastDensity

GAUSS_CRPS_AT_CENTER = (math.sqrt(2.0) - 1.0) / math.sqrt(math.pi)


class TestEstimationMetrics:
    def test_perfect_recovery(self):
        theta0 = np.array([1.0, -2.0, 0.0])
        assert estimation_metrics(np.tile(theta0, (5, 1)), theta0) == (0.0, 0.0, 0.0)

    def test_two_rep_hand_case(self):
        theta0 = np.array([0.5, -0.5])
        e1 = np.array([1.0, 0.0])
        est = np.vstack([theta0 + e1, theta0 - e1])
        mse, var, bias2 = estimation_metrics(est, theta0)
        assert (mse, var, bias2) == (1.0, 1.0, 0.0)

    def test_single_rep(self):
        theta0 = np.zeros(3)
        est = np.array([[0.3, 0.0, -0.4]])
        mse, var, bias2 = estimation_metrics(est, theta0)
        assert var == 0.0
        assert mse == pytest.approx(bias2)

    @given(st.integers(2, 8), st.integers(1, 6), st.integers(0, 10_000))
    @settings(max_examples=40, deadline=None)
    def test_decomposition_identity(self, R, P, seed):
        rng = np.random.default_rng(seed)
        est = rng.standard_normal((R, P))
        theta0 = rng.standard_normal(P)
        mse, var, bias2 = estimation_metrics(est, theta0)
        assert mse == pytest.approx(var + bias2, rel=1e-10, abs=1e-12)


class TestSelectionMetrics:
    def test_perfect_recovery(self):
        rep = selection_metrics(np.array([0.9, 0.1]), np.array([0.8, 0.9, 0.0, 0.1]),
                                np.array([True, False]),
                                np.array([True, True, False, False]))
        assert rep.tpr_group == 100.0 and rep.tpr_var == 100.0
        assert rep.mcc_group == 1.0 and rep.mcc_var == 1.0

    def test_nothing_declared(self):
        rep = selection_metrics(np.array([0.2, 0.1]), np.array([0.3, 0.2]),
                                np.array([True, False]), np.array([True, False]))
        assert rep.tpr_group == 0.0 and rep.tpr_var == 0.0

    def test_mcc_reference_value(self):
        conf = {"TP": 3, "FP": 1, "FN": 2, "TN": 14}
        assert mcc(conf) == pytest.approx(0.5773502691896257)

    def test_mcc_zero_denominator(self):
        assert mcc({"TP": 0, "FP": 0, "FN": 2, "TN": 3}) == 0.0

    @given(st.lists(st.tuples(st.booleans(), st.booleans()), min_size=1, max_size=40))
    @settings(max_examples=60, deadline=None)
    def test_mcc_bounds(self, pairs):
        declared = np.array([p[0] for p in pairs])
        truth = np.array([p[1] for p in pairs])
        from bsgs.evaluation import _confusion
        val = mcc(_confusion(declared, truth))
        assert -1.0 <= val <= 1.0
        if val == 1.0:
            conf = _confusion(declared, truth)
            assert conf["FP"] == 0 and conf["FN"] == 0


class TestCrps:
    def test_gaussian_closed_form_at_center(self):
        fd = ForecastDensity(np.array([0.0]), np.array([1.0]), np.array([1.0]))
        assert crps_gaussian_mixture(fd, 0.0) == pytest.approx(GAUSS_CRPS_AT_CENTER, abs=1e-10)

    def test_degenerate_density_at_outcome(self):
        fd = ForecastDensity(np.array([1.3]), np.array([1e-20]), np.array([1.0]))
        assert abs(fd.mean() - 1.3) == 0.0
        assert crps_gaussian_mixture(fd, 1.3) < 1e-9

    def test_mixture_against_empirical_estimator(self):
        rng = np.random.default_rng(5)
        fd = ForecastDensity(rng.standard_normal(40), rng.uniform(0.2, 2.0, 40))
        y = 0.7
        closed = crps_gaussian_mixture(fd, y)
        comp = rng.choice(40, size=200_000, p=fd.weights)
        draws = fd.means[comp] + np.sqrt(fd.variances[comp]) * rng.standard_normal(200_000)
        assert closed == pytest.approx(crps_empirical(draws, y), rel=0.01)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(6)
        mu, var = rng.standard_normal(10), rng.uniform(0.1, 1.0, 10)
        perm = rng.permutation(10)
        a = ForecastDensity(mu, var)
        b = ForecastDensity(mu[perm], var[perm])
        assert crps_gaussian_mixture(a, 0.4) == pytest.approx(crps_gaussian_mixture(b, 0.4),
                                                              rel=1e-12)
        assert a.logpdf(0.4) == pytest.approx(b.logpdf(0.4), rel=1e-12)


class TestForecastScores:
    def test_relative_conventions(self):
        fds = [ForecastDensity(np.array([0.0]), np.array([1.0]), np.array([1.0]))] * 4
        bench = [ForecastDensity(np.array([0.0]), np.array([4.0]), np.array([1.0]))] * 4
        outcomes = np.array([0.1, -0.2, 0.3, 0.0])
        rep = forecast_scores(fds, outcomes, benchmark=bench)
        assert rep.rel_rmsfe == pytest.approx(1.0)           # same point forecasts
        assert rep.rel_logs > 0.0                            # tighter density scores higher
        assert rep.rel_crps < 1.0
        assert rep.n_periods == 4

    def test_zero_density_outcome_warns(self):
        fds = [ForecastDensity(np.array([0.0]), np.array([1e-12]), np.array([1.0]))]
        with pytest.warns(UserWarning, match="zero predictive density"):
            forecast_scores(fds, np.array([np.inf]))


class TestAr1Benchmark:
    def test_iid_series_slope_near_zero(self):
        rng = np.random.default_rng(7)
        y = 1.0 + rng.standard_normal(10_000)
        c, phi, s2 = fit_ar1(y)
        assert abs(phi) < 0.01
        fd = ar1_benchmark(y)
        assert fd.mean() == pytest.approx(y.mean(), abs=0.05)

    def test_constant_series_rejected(self):
        with pytest.raises(ValueError):
            ar1_benchmark(np.ones(50))

    def test_multi_step_direct_iteration(self):
        rng = np.random.default_rng(8)
        y = rng.standard_normal(200)
        fds = ar1_benchmark(y, n_ahead=3)
        c, phi, s2 = fit_ar1(y)
        assert fds[1].variances[0] == pytest.approx(s2 * (1 + phi ** 2))
        assert fds[2].variances[0] == pytest.approx(s2 * (1 + phi ** 2 + phi ** 4))

    def test_interval_coverage(self):
        rng = np.random.default_rng(9)
        hits = 0
        n_sims = 1000
        for _ in range(n_sims):
            e = rng.standard_normal(151)
            y = np.empty(151)
            y[0] = e[0]
            for t in range(1, 151):
                y[t] = 0.3 * y[t - 1] + e[t]
            fd = ar1_benchmark(y[:150])
            lo = fd.means[0] - 1.6448536269514722 * math.sqrt(fd.variances[0])
            hi = fd.means[0] + 1.6448536269514722 * math.sqrt(fd.variances[0])
            hits += int(lo <= y[150] <= hi)
        assert 0.85 <= hits / n_sims <= 0.94

    def test_oos_densities_use_realized_lags(self):
        rng = np.random.default_rng(10)
        y = rng.standard_normal(120)
        fds = ar1_oos_densities(y, 100)
        c, phi, s2 = fit_ar1(y[:100])
        assert len(fds) == 20
        assert fds[5].means[0] == pytest.approx(c + phi * y[104])


class TestOptimalPool:
    def test_single_model(self):
        np.testing.assert_array_equal(optimal_pool(np.zeros((1, 7))), [1.0])

    def test_identical_models_tie_break(self):
        rng = np.random.default_rng(11)
        row = rng.standard_normal(30)
        w = optimal_pool(np.vstack([row, row]))
        np.testing.assert_allclose(w, [0.5, 0.5], atol=1e-12)

    def test_dominant_model_takes_all(self):
        rng = np.random.default_rng(12)
        lb = rng.standard_normal(40)
        L = np.vstack([lb + 0.5, lb])        # model A strictly better every period
        w = optimal_pool(L)
        assert w[0] >= 1.0 - 1e-6
        # boundary optimum verified by a 1-d grid scan of the objective
        grid = np.linspace(0.0, 1.0, 201)
        F = np.exp(L - L.max(axis=0))
        objs = [np.log(a * F[0] + (1 - a) * F[1]).sum() for a in grid]
        assert np.argmax(objs) == len(grid) - 1

    def test_weights_sum_to_one(self):
        rng = np.random.default_rng(13)
        L = rng.standard_normal((4, 60))
        w = optimal_pool(L)
        assert abs(w.sum() - 1.0) < 1e-12
        assert np.all(w >= 0)

    def test_beats_components_on_training_span(self):
        rng = np.random.default_rng(14)
        L = rng.standard_normal((3, 80))
        w = optimal_pool(L)
        F = np.exp(L - L.max(axis=0))
        pooled = np.log(w @ F).sum()
        singles = [np.log(F[k]).sum() for k in range(3)]
        assert pooled >= max(singles) - 1e-9

    def test_pool_density_mixture(self):
        a = ForecastDensity(np.array([0.0]), np.array([1.0]), np.array([1.0]))
        b = ForecastDensity(np.array([2.0]), np.array([1.0]), np.array([1.0]))
        mix = pool_density([a, b], np.array([0.25, 0.75]))
        assert mix.mean() == pytest.approx(1.5)
        assert math.exp(mix.logpdf(0.0)) == pytest.approx(
            0.25 * math.exp(a.logpdf(0.0)) + 0.75 * math.exp(b.logpdf(0.0)), rel=1e-12)


class TestBilevelSingularValue:
    def test_single_column(self):
        Z = np.array([[1.0], [2.0], [2.0]])
        assert bilevel_sparse_singular_value(Z, (1,), 1, 1) == pytest.approx(1.0)

    def test_orthogonal_equal_norm(self):
        Z = np.eye(4) * 1.7
        assert bilevel_sparse_singular_value(Z, (1, 1, 1, 1), 1, 1) == pytest.approx(1.0)

    def test_duplicated_column_in_group(self):
        col = np.array([1.0, -1.0, 0.5])
        Z = np.column_stack([col, col])
        assert bilevel_sparse_singular_value(Z, (2,), 1, 2) == pytest.approx(0.0, abs=1e-12)

    def test_monotone_in_s_and_r(self):
        rng = np.random.default_rng(15)
        for _ in range(20):
            Z = rng.standard_normal((6, 8))
            partition = (2, 2, 2, 2)
            vals = {(s, r): bilevel_sparse_singular_value(Z, partition, s, r)
                    for s in (1, 2, 3) for r in (1, 2, 4)}
            for s in (1, 2):
                for r in (1, 2, 4):
                    assert vals[(s + 1, r)] <= vals[(s, r)] + 1e-12
            for s in (1, 2, 3):
                assert vals[(s, 2)] <= vals[(s, 1)] + 1e-12
                assert vals[(s, 4)] <= vals[(s, 2)] + 1e-12

    def test_size_guard(self):
        Z = np.ones((3, 30))
        with pytest.raises(ValueError, match="too large"):
            bilevel_sparse_singular_value(Z, (10, 10, 10), 2, 3)
