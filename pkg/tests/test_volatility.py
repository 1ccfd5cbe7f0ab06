import math

import numpy as np
import pytest
from scipy import integrate, stats
from scipy.linalg import toeplitz

from bsgs.volatility import (SVConfig, SVState, outlier_log_odds, step_log_volatility,
                             step_mixture_scale, step_outliers, step_sv_params)


def make_state(T, cfg, level=0.0, **overrides):
    sv = SVState.initial(T, cfg, math.exp(level))
    for key, val in overrides.items():
        setattr(sv, key, val)
    return sv


class TestMixtureScale:
    def test_zero_residual_posterior(self):
        cfg = SVConfig(student_t=True, outliers=False)
        sv = make_state(50_000, cfg, nu=5.0)
        rng = np.random.default_rng(0)
        step_mixture_scale(sv, np.zeros(50_000), rng, cfg)
        # IG((nu+1)/2, nu/2) = IG(3, 2.5): mean 2.5/2 = 1.25
        assert sv.tau_t.mean() == pytest.approx(2.5 / 2.0, rel=0.02)

    def test_high_dof_pins_tau_at_one(self):
        cfg = SVConfig(student_t=True, outliers=False)
        sv = make_state(200_000, cfg, nu=1e6)
        rng = np.random.default_rng(1)
        step_mixture_scale(sv, np.zeros(200_000), rng, cfg)
        assert abs(sv.tau_t.mean() - 1.0) < 1e-3

    def test_reference_moment(self):
        # nu=5 and u^2/(omega exp(zeta)) = 5 -> IG(3, 5), mean 5/2
        cfg = SVConfig(student_t=True, outliers=False)
        sv = make_state(100_000, cfg, nu=5.0)
        u = np.full(100_000, math.sqrt(5.0))
        rng = np.random.default_rng(2)
        step_mixture_scale(sv, u, rng, cfg)
        assert sv.tau_t.mean() == pytest.approx(2.5, rel=0.01)

    def test_disabled_when_not_student_t(self):
        cfg = SVConfig(student_t=False, outliers=False)
        sv = make_state(10, cfg)
        step_mixture_scale(sv, np.ones(10), np.random.default_rng(3), cfg)
        np.testing.assert_array_equal(sv.tau_t, 1.0)


class TestLogVolatility:
    def test_zero_residual_tilted_gaussian_oracle(self):
        # with u = 0 the conditional is the AR(1) prior tilted by exp(-sum zeta/2),
        # a Gaussian with mean mu - C 1/2 and unchanged covariance
        T = 20
        mu, phi, s2 = -0.5, 0.7, 0.09
        cfg = SVConfig(student_t=False, outliers=False)
        sv = make_state(T, cfg, mu_zeta=mu, phi_zeta=phi, sigma2_zeta=s2)
        sv.zeta = np.full(T, mu)
        C = s2 / (1.0 - phi * phi) * toeplitz(phi ** np.arange(T))
        target_mean = mu - 0.5 * C @ np.ones(T)
        rng = np.random.default_rng(4)
        n = 40_000
        mid = T // 2
        samples = np.empty(n)
        for k in range(n):
            step_log_volatility(sv, np.zeros(T), rng, cfg)
            samples[k] = sv.zeta[mid]
        # batch means absorb the single-site autocorrelation
        batches = samples.reshape(100, -1).mean(axis=1)
        se = batches.std(ddof=1) / math.sqrt(batches.size)
        assert abs(samples.mean() - target_mean[mid]) < 4 * se
        assert samples.var() == pytest.approx(C[mid, mid], rel=0.1)

    def test_tiny_variance_freezes_path(self):
        T = 30
        cfg = SVConfig(student_t=False, outliers=False)
        sv = make_state(T, cfg, sigma2_zeta=1e-12, phi_zeta=0.0)
        rng = np.random.default_rng(5)
        accept = []
        for _ in range(200):
            step_log_volatility(sv, np.ones(T), rng, cfg)
            accept.append(sv.accept_zeta)
        assert np.mean(accept) < 0.01
        assert np.ptp(sv.zeta) < 1e-6

    def test_path_recovery_on_synthetic_data(self):
        # frozen other blocks: the sampled path should track a known volatility path
        cfg = SVConfig(student_t=False, outliers=False)
        corr = []
        for seed in range(20):
            rng = np.random.default_rng(100 + seed)
            T = 50
            mu, phi, s2 = 0.0, 0.95, 0.4
            zeta_true = np.empty(T)
            zeta_true[0] = mu + math.sqrt(s2 / (1 - phi ** 2)) * rng.standard_normal()
            for t in range(1, T):
                zeta_true[t] = mu + phi * (zeta_true[t - 1] - mu) \
                    + math.sqrt(s2) * rng.standard_normal()
            u = np.exp(0.5 * zeta_true) * rng.standard_normal(T)
            sv = make_state(T, cfg, mu_zeta=mu, phi_zeta=phi, sigma2_zeta=s2)
            sv.zeta = np.zeros(T)
            path_sum = np.zeros(T)
            n_keep = 0
            for sweep in range(8000):
                step_log_volatility(sv, u, rng, cfg)
                if sweep >= 3000:
                    path_sum += sv.zeta
                    n_keep += 1
            corr.append(np.corrcoef(path_sum / n_keep, zeta_true)[0, 1])
        assert np.mean(corr) > 0.8

    def test_pinned_constant_mode_adapts_level(self):
        cfg = SVConfig(student_t=False, outliers=False, pin_constant_zeta=True)
        T = 400
        rng = np.random.default_rng(6)
        u = 2.0 * rng.standard_normal(T)   # variance 4 -> level log(4)
        sv = make_state(T, cfg, mu_zeta=0.0)
        levels = []
        for sweep in range(4000):
            step_log_volatility(sv, u, rng, cfg)
            if sweep >= 1000:
                levels.append(sv.mu_zeta)
        assert np.ptp(sv.zeta) == 0.0
        assert np.mean(levels) == pytest.approx(math.log(np.var(u)), abs=0.1)


class TestOutliers:
    def test_probability_zero_and_one(self):
        cfg = SVConfig(student_t=False, outliers=True)
        rng = np.random.default_rng(7)
        sv = make_state(30, cfg, p_omega=0.0)
        step_outliers(sv, np.ones(30), rng, cfg)
        np.testing.assert_array_equal(sv.omega_t, 1.0)
        sv = make_state(30, cfg, p_omega=1.0)
        step_outliers(sv, np.ones(30), rng, cfg)
        assert np.all((sv.omega_t > 2.0) & (sv.omega_t < cfg.omega_bar))

    def test_odds_match_direct_quadrature(self):
        cfg = SVConfig(student_t=False, outliers=True)
        nodes, weights = cfg.outlier_grid()
        for u2 in (16.0, 64.0, 144.0):
            u = math.sqrt(u2)
            base = 1.0
            ours = outlier_log_odds(u, base, 0.05, nodes, weights, cfg.omega_bar)
            integral, _ = integrate.quad(
                lambda om: stats.norm.pdf(u, 0.0, math.sqrt(om * base)), 2.0, cfg.omega_bar,
                epsabs=1e-14, epsrel=1e-13)
            ref = (math.log(0.05) + math.log(integral / (cfg.omega_bar - 2.0))
                   - math.log(0.95) - stats.norm.logpdf(u, 0.0, 1.0))
            assert ours == pytest.approx(ref, rel=1e-6, abs=1e-9)

    def test_huge_shock_flags_outlier(self):
        cfg = SVConfig(student_t=False, outliers=True)
        rng = np.random.default_rng(8)
        sv = make_state(200, cfg, p_omega=0.05)
        u = np.ones(200)
        u[17] = 9.0   # nine baseline standard deviations
        flags = np.zeros(200)
        for _ in range(400):
            step_outliers(sv, u, rng, cfg)
            flags += sv.omega_t > 1.0
        assert flags[17] / 400 > 0.9
        assert np.mean(flags[u == 1.0] / 400) < 0.3


class TestSvParams:
    def test_constant_path_shrinks_sigma2(self):
        cfg = SVConfig(student_t=False, outliers=False)
        rng = np.random.default_rng(9)
        sv = make_state(200, cfg)
        sv.zeta = np.zeros(200)
        draws = []
        for _ in range(2000):
            sv.phi_zeta, sv.mu_zeta = 0.5, 0.0   # keep the regression residuals at zero
            step_sv_params(sv, rng, cfg)
            draws.append(sv.sigma2_zeta)
        a0, b0 = cfg.sig2_zeta_prior
        prior_mean = b0 / (a0 - 1.0)
        assert np.mean(draws) < prior_mean
        assert np.mean(draws) < 0.002

    def test_ar_parameter_recovery(self):
        cfg = SVConfig(student_t=False, outliers=False)
        err_mu, err_phi = [], []
        for seed in range(20):
            rng = np.random.default_rng(200 + seed)
            T = 500
            mu, phi, s2 = -1.0, 0.9, 0.09
            zeta = np.empty(T)
            zeta[0] = mu + math.sqrt(s2 / (1 - phi ** 2)) * rng.standard_normal()
            for t in range(1, T):
                zeta[t] = mu + phi * (zeta[t - 1] - mu) + math.sqrt(s2) * rng.standard_normal()
            sv = make_state(T, cfg)
            sv.zeta = zeta
            mus, phis = [], []
            for sweep in range(300):
                step_sv_params(sv, rng, cfg)
                if sweep >= 100:
                    mus.append(sv.mu_zeta)
                    phis.append(sv.phi_zeta)
            err_mu.append(abs(np.mean(mus) - mu))
            err_phi.append(abs(np.mean(phis) - phi))
        assert np.mean(err_mu) < 0.1
        assert np.mean(err_phi) < 0.1

    def test_no_outliers_shrinks_p_omega(self):
        cfg = SVConfig(student_t=False, outliers=True)
        rng = np.random.default_rng(10)
        sv = make_state(400, cfg)
        sv.omega_t = np.ones(400)
        draws = []
        for _ in range(3000):
            step_sv_params(sv, rng, cfg)
            sv.omega_t = np.ones(400)
        for _ in range(3000):
            step_sv_params(sv, rng, cfg)
            draws.append(sv.p_omega)
            sv.omega_t = np.ones(400)
        a_p, b_p = cfg.outlier_prior()
        assert np.mean(draws) < a_p / (a_p + b_p)

    def test_nu_griddy_concentrates(self):
        cfg = SVConfig(student_t=True, outliers=False)
        rng = np.random.default_rng(11)
        nu_true = 5.0
        tau = (0.5 * nu_true) / rng.gamma(0.5 * nu_true, 1.0, size=3000)
        sv = make_state(3000, cfg)
        sv.tau_t = tau
        draws = []
        for _ in range(400):
            step_sv_params(sv, rng, cfg)
            draws.append(sv.nu)
        assert abs(np.mean(draws) - nu_true) < 1.0


class TestMarginalVariance:
    def test_scale_mixture_matches_student_t_variance(self):
        rng = np.random.default_rng(12)
        nu, omega, zeta = 8.0, 1.0, 0.4
        n = 1_000_000
        tau = (0.5 * nu) / rng.gamma(0.5 * nu, 1.0, size=n)
        u = rng.standard_normal(n) * np.sqrt(tau * omega * math.exp(zeta))
        target = nu / (nu - 2.0) * omega * math.exp(zeta)
        assert np.var(u) == pytest.approx(target, rel=0.02)

    def test_variances_strictly_positive(self):
        cfg = SVConfig(student_t=True, outliers=True)
        sv = make_state(50, cfg)
        rng = np.random.default_rng(13)
        u = rng.standard_normal(50)
        from bsgs.volatility import sv_sweep
        for _ in range(50):
            sv_sweep(sv, u, rng, cfg)
            assert np.all(sv.variances() > 0)
